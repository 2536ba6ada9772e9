"""Device profiles: geometry defaults plus allocator policy, loaded from YAML."""

from snapkit.config.loader import (
    DeviceProfile,
    DeviceSettings,
    ProfileInfo,
    list_profiles,
    load_profile,
)

__all__ = [
    "DeviceProfile",
    "DeviceSettings",
    "ProfileInfo",
    "list_profiles",
    "load_profile",
]
