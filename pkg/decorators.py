from functools import wraps
import logging
import os
import traceback

import click

from errors import UnitokError, ValidationError

logger = logging.getLogger('unitok.cli')

EXIT_VALIDATION = 3
EXIT_FAILURE = 4

force_option = click.option('--force', is_flag=True, default=False, help='Overwrite existing outputs.')


def exit_codes(f):
    """
    Decorator mapping exceptions raised by a command onto process exit codes:
    3 for validation problems, 4 for every other failure.
    """
    @wraps(f)
    def decorated_function(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return f(*args, **kwargs)
        except (click.exceptions.Exit, click.ClickException, click.Abort):
            raise
        except ValidationError as e:
            logger.error(f"[CLI] {ctx.info_name}: {e}")
            click.echo(f"Error: {e}", err=True)
            ctx.exit(EXIT_VALIDATION)
        except UnitokError as e:
            logger.error(f"[CLI] {ctx.info_name} failed: {e}")
            click.echo(f"Error: {e}", err=True)
            ctx.exit(EXIT_FAILURE)
        except Exception as e:
            logger.error(f"[CLI] Unexpected error in {ctx.info_name}: {str(e)}")
            logger.error(traceback.format_exc())
            click.echo(f"Error: {e}", err=True)
            ctx.exit(EXIT_FAILURE)
    return decorated_function


def _occupied(path):
    if os.path.isdir(path):
        return bool(os.listdir(path))
    return os.path.exists(path)


def refuse_overwrite(*names):
    """
    Decorator refusing to run when any of the named path arguments already
    holds output, unless the command was given --force.
    """
    def decorator(f):
        @wraps(f)
        def decorated_function(*args, **kwargs):
            if not kwargs.get('force'):
                for name in names:
                    path = kwargs.get(name)
                    if path and _occupied(path):
                        raise ValidationError(f"Output '{path}' already exists; pass --force to overwrite it")
            return f(*args, **kwargs)
        return decorated_function
    return decorator
