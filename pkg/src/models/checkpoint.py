"""Versioned checkpoint container for the four networks."""
import logging
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import torch
import torch.nn as nn

from src.errors import CheckpointVersionError, NotFoundError, ParseError
from src.models.networks import rebuild_network

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "osr-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    networks: Dict[str, nn.Module]
    fingerprint: str
    step: int
    extras: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: Union[str, Path], networks: Dict[str, nn.Module], fingerprint: str,
                    step: int = 0, extras: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write named networks with their build specs, fingerprint and step counter.

    Args:
        path: Destination file
        networks: {"teacher": net, "student": net, ...}
        fingerprint: Config fingerprint the networks were built under
        step: Training step counter
        extras: Plain values stored alongside (lambda, split, ...)

    Returns:
        Path: The written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "fingerprint": fingerprint,
        "step": int(step),
        "networks": {
            name: {
                "spec": net.spec(),
                "frozen": [n for n, p in net.named_parameters() if not p.requires_grad],
                "state": net.state_dict(),
            }
            for name, net in networks.items()
        },
        "extras": extras or {},
    }
    torch.save(payload, path)
    logger.info("Saved checkpoint %s (%s, step %d)", path, ", ".join(networks), step)
    return path


def load_checkpoint(path: Union[str, Path], expected_fingerprint: Optional[str] = None) -> Checkpoint:
    """
    Load a checkpoint and rebuild its networks.

    Raises:
        NotFoundError: file missing
        ParseError: file is not a readable checkpoint
        CheckpointVersionError: wrong format version or config fingerprint
    """
    path = Path(path)
    if not path.is_file():
        raise NotFoundError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (pickle.UnpicklingError, RuntimeError, EOFError, ValueError) as e:
        raise ParseError(f"Corrupt checkpoint {path}: {e}") from None

    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"{path} is not a checkpoint file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path} has checkpoint version {payload.get('version')}, expected {CHECKPOINT_VERSION}"
        )
    if expected_fingerprint is not None and payload["fingerprint"] != expected_fingerprint:
        raise CheckpointVersionError(
            f"{path} was written for config fingerprint {payload['fingerprint']}, "
            f"current config has {expected_fingerprint}"
        )

    networks = {}
    for name, entry in payload["networks"].items():
        net = rebuild_network(entry["spec"])
        try:
            net.load_state_dict(entry["state"])
        except RuntimeError as e:
            raise ParseError(f"Checkpoint {path}: network '{name}' does not match its spec: {e}") from None
        frozen = set(entry.get("frozen", []))
        for param_name, param in net.named_parameters():
            param.requires_grad_(param_name not in frozen)
        networks[name] = net
    return Checkpoint(networks=networks, fingerprint=payload["fingerprint"], step=payload["step"],
                      extras=payload.get("extras", {}))
