"""
Environment settings for crowd-rom
"""

import os
from dotenv import load_dotenv

load_dotenv()

# Logging
LOG_LEVEL = os.getenv("CROWD_ROM_LOG_LEVEL", "INFO").upper()
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Runtime
DEFAULT_WORKERS = int(os.getenv("CROWD_ROM_WORKERS", "1"))
DEFAULT_STAGE_DIR = os.getenv("CROWD_ROM_STAGE_DIR", "runs")

# Notifications
SLACK_WEBHOOK_URL = os.getenv("SLACK_WEBHOOK_CROWD_ROM_URL")
NOTIFICATION_TIMEOUT = int(os.getenv("CROWD_ROM_NOTIFICATION_TIMEOUT", "10"))

# Output formatting
CSV_FLOAT_FORMAT = "%.17g"
CONFIG_HASH_PREFIX_LEN = 12

# Testing
DESK_SCALE_TESTS = os.getenv("CROWD_ROM_DESK_SCALE", "0") == "1"
