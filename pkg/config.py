"""Environment settings and the ``key = value`` run-configuration format."""
from dataclasses import dataclass
import logging
import os

from dotenv import load_dotenv

from errors import ConfigError
from models import TrainConfig, ViTConfig

logger = logging.getLogger('unitok.config')


@dataclass
class Settings:
    threads: int = 0
    log_level: str = 'INFO'
    log_file: str = None


def load_settings():
    """Process environment (after loading ``.env``) -> Settings"""
    load_dotenv()
    try:
        threads = int(os.environ.get('UNITOK_THREADS', '0'))
    except ValueError:
        raise ConfigError(f"UNITOK_THREADS must be an integer, got '{os.environ.get('UNITOK_THREADS')}'") from None
    if threads < 0:
        raise ConfigError("UNITOK_THREADS must be non-negative")
    return Settings(
        threads=threads,
        log_level=os.environ.get('UNITOK_LOG_LEVEL', 'INFO').upper(),
        log_file=os.environ.get('UNITOK_LOG_FILE') or None,
    )


def _optional_str(value):
    return None if value.lower() in ('', 'none', 'null') else value


# key -> (parser, attribute path inside TrainConfig)
KEYS = {
    'train.seed': (int, ('seed',)),
    'train.mode': (str, ('mode',)),
    'codec.f': (int, ('codec_f',)),
    'codec.seed': (int, ('codec_seed',)),
    'vit.depth': (int, ('vit', 'depth')),
    'vit.dim': (int, ('vit', 'dim')),
    'vit.heads': (int, ('vit', 'heads')),
    'vit.mlp_ratio': (int, ('vit', 'mlp_ratio')),
    'vit.embed_dim_contrastive': (int, ('vit', 'embed_dim_contrastive')),
    'recon.tau': (float, ('tau',)),
    'recon.beta': (float, ('beta',)),
    'recon.lambda_pretrain': (float, ('stages', 0, 'lam')),
    'recon.lambda_finetune': (float, ('stages', 1, 'lam')),
    'recon.decoder_depth': (int, ('decoder_depth',)),
    'text.depth': (int, ('text', 'depth')),
    'text.width': (int, ('text', 'width')),
    'text.heads': (int, ('text', 'heads')),
    'text.max_len': (int, ('text', 'max_len')),
    'loss.omega_rec': (float, ('omega_rec',)),
    'loss.omega_und': (float, ('omega_und',)),
    'loss.alpha': (float, ('alpha',)),
    'optim.beta1': (float, ('optim', 'beta1')),
    'optim.beta2': (float, ('optim', 'beta2')),
    'optim.eps': (float, ('optim', 'eps')),
    'optim.weight_decay': (float, ('optim', 'weight_decay')),
    'data.dir': (_optional_str, ('data', 'dir')),
    'data.captions': (str, ('data', 'captions')),
    'data.n_train': (int, ('data', 'n_train')),
    'data.n_eval': (int, ('data', 'n_eval')),
    'data.seed': (int, ('data', 'seed')),
    'data.master_res': (int, ('data', 'master_res')),
    'eval.n_retrieval': (int, ('n_retrieval',)),
}
for _index in (0, 1):
    for _name, _parser in (('resolution', int), ('batch_size', int), ('base_lr', float),
                           ('total_steps', int), ('warmup_steps', int)):
        KEYS[f'stage{_index + 1}.{_name}'] = (_parser, ('stages', _index, _name))

PRESET_KEY = 'vit.preset'


def parse_lines(text, source='<config>'):
    """Raw ``{key: (value, line)}`` pairs; ``[section]`` headers prefix the keys below them"""
    values = {}
    section = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if line.startswith('[') and line.endswith(']'):
            section = line[1:-1].strip() or None
            continue
        if '=' not in line:
            raise ConfigError(f"Expected 'key = value' in {source}", line=line_no, key=line)
        key, value = (part.strip() for part in line.split('=', 1))
        if section and '.' not in key:
            key = f'{section}.{key}'
        if key in values:
            raise ConfigError(f"Duplicate key in {source}", key=key, line=line_no)
        values[key] = (value.strip('"\''), line_no)
    return values


def _assign(cfg, path, value):
    target = cfg
    for part in path[:-1]:
        target = target[part] if isinstance(part, int) else getattr(target, part)
    setattr(target, path[-1], value)


def parse_config_text(text, source='<config>'):
    """Config text -> validated TrainConfig (defaults fill every missing key)"""
    raw = parse_lines(text, source)
    cfg = TrainConfig()
    if PRESET_KEY in raw:
        value, line_no = raw.pop(PRESET_KEY)
        try:
            cfg.vit = ViTConfig.preset(value)
        except ConfigError as e:
            raise ConfigError(e.detail, key=PRESET_KEY, line=line_no) from None

    for key, (value, line_no) in raw.items():
        if key not in KEYS:
            raise ConfigError(f"Unknown config key in {source}", key=key, line=line_no)
        parser, path = KEYS[key]
        try:
            parsed = parser(value)
        except ValueError:
            raise ConfigError(f"Cannot parse '{value}' as {parser.__name__.lstrip('_')}", key=key, line=line_no) from None
        _assign(cfg, path, parsed)

    try:
        cfg.validate()
    except ConfigError as e:
        if e.key in raw and e.line is None:
            raise ConfigError(e.detail, key=e.key, line=raw[e.key][1]) from None
        raise
    return cfg


def load_config(path):
    """Read and parse a config file; returns (TrainConfig, text)"""
    if not os.path.isfile(path):
        raise ConfigError(f"Config file not found: {path}")
    with open(path, encoding='utf-8') as handle:
        text = handle.read()
    cfg = parse_config_text(text, source=path)
    logger.info(f"[CONFIG] Loaded {path}: mode={cfg.mode} seed={cfg.seed} "
                f"stages={[s.resolution for s in cfg.stages]}")
    return cfg, text


def _render(value):
    if value is None:
        return 'none'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(cfg):
    """Fully resolved config text; parsing it back gives an identical TrainConfig"""
    lines = []
    section = None
    for key, (_, path) in KEYS.items():
        head = key.split('.', 1)[0]
        if head != section:
            if lines:
                lines.append('')
            section = head
        target = cfg
        for part in path:
            target = target[part] if isinstance(part, int) else getattr(target, part)
        lines.append(f'{key} = {_render(target)}')
    return '\n'.join(lines) + '\n'



# Small enough for a CPU test run, long enough for the loss-interaction curves to separate
REDUCED_ABLATION_TEXT = """\
train.seed = 0
codec.f = 4
vit.depth = 2
vit.dim = 32
vit.heads = 4
vit.mlp_ratio = 4
vit.embed_dim_contrastive = 32
recon.decoder_depth = 2
text.depth = 2
text.width = 32
text.heads = 4
text.max_len = 32

[stage1]
resolution = 32
batch_size = 16
base_lr = 0.001
total_steps = 600
warmup_steps = 30

[stage2]
resolution = 32
batch_size = 16
base_lr = 0.00005
total_steps = 0
warmup_steps = 0

[data]
n_train = 256
n_eval = 256
master_res = 32

[eval]
n_retrieval = 256
"""


def reduced_ablation_config():
    """Frozen reduced preset the ablation acceptance run is measured against"""
    return parse_config_text(REDUCED_ABLATION_TEXT, source='<reduced ablation preset>')
