"""Hidden-visit detection and estimation for sparse call-detail-record trajectories."""

from .model import CdrRecord, CellTowerId, EventType, GeoPoint, StudyWindow, haversine_km

__version__ = "0.1.0"

__all__ = ["CdrRecord", "CellTowerId", "EventType", "GeoPoint", "StudyWindow", "haversine_km", "__version__"]
