# Command modules, registered on the command group in app.py
