"""Device profile loader.

A profile names a default device geometry and the allocator policy used to
place blocks. Geometry is written into the image at format time; the policy
is not, so the same profile has to be selected on every open for block
numbers to replay identically.

Profiles are looked up in the user directory first, then in the packaged
``profiles`` directory.

Usage:
    from snapkit.config import load_profile

    profile = load_profile("trace")
    geometry = profile.geometry()
    policy = profile.allocator

    # Load from custom file
    profile = load_profile("custom", config_path=Path("my-profile.yml"))
"""

import logging
from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, Field, ValidationError

from snapkit.core.geometry import AllocatorPolicy, DeviceGeometry

logger = logging.getLogger(__name__)

# Config file locations
DEFAULT_CONFIG_DIR = Path(__file__).parent / "profiles"
USER_CONFIG_DIR = Path.home() / ".snapkit" / "config" / "profiles"


class ProfileInfo(BaseModel):
    name: str = Field(..., description="Profile identifier")
    description: str = Field(default="", description="What the profile is for")


class DeviceSettings(BaseModel):
    """Geometry request, validated for real by :class:`DeviceGeometry`."""

    block_size: int = Field(256, description="Bytes per block (power of two)")
    total_blocks: int = Field(128, ge=1, description="Device size in blocks")
    namespace_blocks: int = Field(1, ge=1)
    inode_table_blocks: int = Field(4, ge=1)


class DeviceProfile(BaseModel):
    """Complete profile file."""

    profile: ProfileInfo
    device: DeviceSettings = Field(default_factory=DeviceSettings)
    allocator: AllocatorPolicy = Field(default_factory=AllocatorPolicy)

    def geometry(
        self,
        block_size: Optional[int] = None,
        total_blocks: Optional[int] = None,
        namespace_blocks: Optional[int] = None,
        inode_table_blocks: Optional[int] = None,
    ) -> DeviceGeometry:
        """Build the profile's geometry, with optional per-field overrides.

        Raises:
            pydantic.ValidationError: if the resulting layout is invalid
        """
        dev = self.device
        return DeviceGeometry.build(
            block_size=block_size or dev.block_size,
            total_blocks=total_blocks or dev.total_blocks,
            namespace_blocks=namespace_blocks or dev.namespace_blocks,
            inode_table_blocks=inode_table_blocks or dev.inode_table_blocks,
        )


def _profile_path(name: str, config_dir: Optional[Path]) -> Path:
    if config_dir is not None:
        return config_dir / f"{name}.yml"
    user_path = USER_CONFIG_DIR / f"{name}.yml"
    if user_path.exists():
        return user_path
    return DEFAULT_CONFIG_DIR / f"{name}.yml"


def load_profile(
    name: str = "default",
    config_path: Optional[Path] = None,
    config_dir: Optional[Path] = None,
    fallback: Optional[DeviceProfile] = None,
) -> DeviceProfile:
    """Load a device profile.

    Args:
        name: Profile name (file stem)
        config_path: Explicit path to a profile file (overrides name lookup)
        config_dir: Directory to look in instead of user + packaged dirs
        fallback: Returned when the file is missing or invalid

    Raises:
        FileNotFoundError: if the profile file is missing and no fallback is given
        ValidationError: if the profile is invalid and no fallback is given

    Examples:
        >>> load_profile("trace").allocator.stride
        10
    """
    file_path = Path(config_path) if config_path else _profile_path(name, config_dir)

    if not file_path.exists():
        if fallback is not None:
            return fallback
        raise FileNotFoundError(f"Profile not found: {file_path}")

    try:
        with open(file_path) as f:
            data = yaml.safe_load(f) or {}
        profile = DeviceProfile(**data)
    except (ValidationError, yaml.YAMLError) as e:
        logger.warning(f"Profile validation error in {file_path}: {e}")
        if fallback is not None:
            logger.warning("Using fallback profile")
            return fallback
        raise

    logger.debug(f"Loaded profile {profile.profile.name} from {file_path}")
    return profile


def list_profiles(config_dir: Optional[Path] = None) -> list[ProfileInfo]:
    """Available profiles, user profiles shadowing packaged ones of the same name."""
    dirs = [config_dir] if config_dir else [DEFAULT_CONFIG_DIR, USER_CONFIG_DIR]
    found: dict[str, ProfileInfo] = {}
    for directory in dirs:
        if not directory.exists():
            continue
        for path in sorted(directory.glob("*.yml")):
            try:
                found[path.stem] = load_profile(config_path=path).profile
            except (ValidationError, yaml.YAMLError) as e:
                logger.warning(f"Skipping invalid profile {path}: {e}")
    return [found[name] for name in sorted(found)]
