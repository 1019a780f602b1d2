from dotenv import load_dotenv
import os
load_dotenv()  # Load environment variables from .env file

# Thread caps must be in place before numpy is imported; 0 means one deterministic thread
threads = os.environ.get('UNITOK_THREADS', '0').strip()
threads = '1' if threads in ('', '0') or not threads.isdigit() else threads
for var in ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS', 'NUMEXPR_NUM_THREADS'):
    os.environ.setdefault(var, threads)

from app import main

if __name__ == '__main__':
    main()
