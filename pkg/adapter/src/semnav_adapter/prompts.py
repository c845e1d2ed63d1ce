"""Prompt templates and assembly.

The two long templates are product constants consumed verbatim by the
reasoner backends; <modality> and <behavior> are the only substitution
slots. Auxiliary context (prior cost table, selection history, format
reminders) attaches as separate parts so the template text itself never
varies.
"""

from __future__ import annotations

import json

SCENE_RISK_TEMPLATE = (
    "Identify all the objects seen (simple 1 word names) in the image and "
    "risk those objects may have while navigating if the robot collides "
    "with them or is hard to traverse. Also mention overall description of "
    "the current scene. (40 character limit). Assign a risk cost in range "
    "of 0.0 to 1.0, where 0.0 is no risk and 1.0 is the highest risk. "
    "Assign a curiosity score in range of 0.0 to 1.0 for the objects, "
    "where objects with similar place of use are more curious. e.g. a "
    "table and desk are closer to each other in meaning with higher score "
    "than car and desk. If the object is risky to go over give that object "
    "a high cost, otherwise give the ground a low cost. Keep previously "
    "seen items in list. The robot is <modality>"
)

SELECT_PATH_TEMPLATE = (
    "Check which color path line is the best to take for a <modality> "
    "robot with the behavior requirement <behavior>. Respond in two lines: "
    "Reason: and Color: # or 'none' if no goal point or viable safe path "
    "visible."
)

GOAL_POINT_TEMPLATE = (
    "Locate the <goal> in the image. Respond with a single JSON object "
    '{"found": true|false, "u": <0.0-1.0>, "v": <0.0-1.0>} giving the '
    "normalized image coordinates of the point where it meets the ground; "
    "set found to false if it is not visible."
)

TABLE_FORMAT_REMINDER = (
    "Reminder: reply with a single JSON object of the form "
    '{"scene": "<description, 40 chars max>", "objects": [{"name": '
    '"<one word>", "risk": <0.0-1.0>, "curiosity": <0.0-1.0>}, ...]}. '
    "No prose outside the JSON object."
)

PRIOR_TABLE_HEADER = "Previously seen cost table (JSON):"


def scene_risk_parts(modality: str, prior_obj: dict | None) -> tuple[str, ...]:
    parts = [SCENE_RISK_TEMPLATE.replace("<modality>", modality)]
    if prior_obj and prior_obj.get("entries"):
        parts.append(
            PRIOR_TABLE_HEADER
            + " "
            + json.dumps(prior_obj, sort_keys=True, separators=(",", ":"))
        )
    return tuple(parts)


def select_path_parts(
    modality: str, behavior: str, history: tuple[dict, ...]
) -> tuple[str, ...]:
    parts = [
        SELECT_PATH_TEMPLATE.replace("<modality>", modality).replace(
            "<behavior>", behavior
        )
    ]
    for item in history:
        parts.append(
            f"Earlier selection (frame {item['frame_id']}, "
            f"overlay {str(item['digest'])[:12]}): {item['choice']}"
        )
    return tuple(parts)


def goal_point_parts(goal_text: str) -> tuple[str, ...]:
    return (GOAL_POINT_TEMPLATE.replace("<goal>", goal_text),)
