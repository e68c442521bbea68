import os
import json
import hashlib
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional

from src.utils.errors import FormatError


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def digest_paths(paths: List[str], root: Optional[str] = None) -> Dict[str, str]:
    """
    Digest every existing file (directories are walked in sorted order).

    Keys are made relative to root when given, so runs into different
    directories can be compared.
    """
    def key(p: str) -> str:
        return os.path.relpath(p, root) if root else p

    digests = {}
    for path in paths:
        if os.path.isdir(path):
            for walk_root, dirs, files in os.walk(path):
                dirs.sort()
                for name in sorted(files):
                    full = os.path.join(walk_root, name)
                    digests[key(full)] = sha256_file(full)
        elif os.path.isfile(path):
            digests[key(path)] = sha256_file(path)
    return digests


@dataclass
class RunManifest:
    """Everything needed to replay a CLI run and check it reproduced."""
    command: str
    argv: List[str]
    config_hash: str
    config_text: str
    seed: int
    input_digests: Dict[str, str] = field(default_factory=dict)
    output_digests: Dict[str, str] = field(default_factory=dict)
    exit_code: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> Dict:
        return asdict(self)

    def save(self, path: str) -> str:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")
        return path

    @classmethod
    def load(cls, path: str) -> "RunManifest":
        try:
            with open(path, "r", encoding="utf-8") as f:
                return cls(**json.load(f))
        except (OSError, ValueError, TypeError) as e:
            raise FormatError(f"{path}: unreadable run manifest ({e})") from e
