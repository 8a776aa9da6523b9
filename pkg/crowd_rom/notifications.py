"""
Slack notifications for finished and failed pipeline stages.

Disabled unless SLACK_WEBHOOK_CROWD_ROM_URL is set. Delivery problems are
logged and never fail a stage.
"""

import logging
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional

import requests

from . import settings

logger = logging.getLogger(__name__)


@dataclass
class StageNotification:
    """Outcome of one pipeline stage"""
    stage: str
    config_hash: str
    succeeded: bool
    duration_s: float = 0.0
    n_failures: int = 0
    details: List[str] = field(default_factory=list)
    created_at: Optional[str] = None


class StageNotifier:
    """Posts stage outcomes to a Slack webhook"""

    def __init__(self, webhook_url: Optional[str] = None, timeout: Optional[int] = None):
        self.webhook_url = webhook_url if webhook_url is not None else settings.SLACK_WEBHOOK_URL
        self.timeout = timeout or settings.NOTIFICATION_TIMEOUT
        self.enabled = bool(self.webhook_url)
        if not self.enabled:
            logger.info("Slack notifications disabled. Set SLACK_WEBHOOK_CROWD_ROM_URL to enable.")

    def send_stage_notification(self, notification: StageNotification) -> bool:
        if not self.enabled:
            return False
        try:
            response = requests.post(
                self.webhook_url,
                json=self._create_stage_message(notification),
                headers={"Content-Type": "application/json"},
                timeout=self.timeout,
            )
            if response.status_code == 200:
                logger.info(f"Stage notification sent for {notification.stage}")
                return True
            logger.warning(
                f"Failed to send Slack notification: {response.status_code} - {response.text}"
            )
            return False
        except requests.RequestException as e:
            logger.warning(f"Error sending Slack notification: {e}")
            return False

    def _create_stage_message(self, notification: StageNotification) -> Dict[str, Any]:
        status = "finished" if notification.succeeded else "FAILED"
        color = "#36a64f" if notification.succeeded and not notification.n_failures else "#ff6b6b"
        fields = [
            {"type": "mrkdwn", "text": f"*Stage:*\n{notification.stage}"},
            {"type": "mrkdwn", "text": f"*Config:*\n{notification.config_hash}"},
            {"type": "mrkdwn", "text": f"*Duration:*\n{notification.duration_s:.1f} s"},
            {"type": "mrkdwn", "text": f"*Failures:*\n{notification.n_failures}"},
        ]
        blocks: List[Dict[str, Any]] = [
            {
                "type": "header",
                "text": {
                    "type": "plain_text",
                    "text": f"crowd-rom {notification.stage} {status}",
                },
            },
            {"type": "section", "fields": fields},
        ]
        if notification.details:
            blocks.append(
                {
                    "type": "section",
                    "text": {"type": "mrkdwn", "text": "\n".join(notification.details[:10])},
                }
            )
        return {
            "attachments": [{"color": color, "blocks": blocks}],
            "text": f"crowd-rom {notification.stage} {status}",
        }


def notify_stage(
    notifier: Optional[StageNotifier],
    stage: str,
    config_hash: str,
    succeeded: bool,
    duration_s: float = 0.0,
    details: Optional[List[str]] = None,
) -> bool:
    if notifier is None:
        return False
    details = details or []
    notification = StageNotification(
        stage=stage,
        config_hash=config_hash,
        succeeded=succeeded,
        duration_s=duration_s,
        n_failures=len(details),
        details=details,
        created_at=datetime.now().isoformat(),
    )
    return notifier.send_stage_notification(notification)
