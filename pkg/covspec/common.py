import hashlib
import json
import logging
import sys

VERBOSE = 15

logging.addLevelName(VERBOSE, 'VERBOSE')

logger = logging.getLogger('covspec')
logger.verbose = lambda message: logger.log(level=VERBOSE, msg=message)
logger.setLevel(logging.INFO)
handler = logging.StreamHandler(sys.stdout)
handler.setFormatter(logging.Formatter('%(name)s:%(levelname)s - %(message)s'))
logger.addHandler(handler)

LOG_LEVELS = {'debug': logging.DEBUG,
              'verbose': VERBOSE,
              'info': logging.INFO,
              'warning': logging.WARNING,
              'error': logging.ERROR,
              'critical': logging.CRITICAL}


def set_log_level(level: str):
    if level not in LOG_LEVELS:
        raise ValueError(f"{level} is not one of {list(LOG_LEVELS.keys())}")
    logger.setLevel(LOG_LEVELS[level])


def digest(obj) -> str:
    """
    md5 hex digest of the canonical json form of obj (sorted keys)
    """
    m = hashlib.md5()
    m.update(json.dumps(obj, sort_keys=True, separators=(',', ':')).encode())
    return m.hexdigest()


def digest64(obj) -> int:
    """
    low 64 bits of digest(obj), as carried by the session hello
    """
    return int(digest(obj), 16) & (2**64 - 1)
