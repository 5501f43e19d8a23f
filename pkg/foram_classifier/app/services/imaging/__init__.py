# Plate image processing: filters, connected components, specimen detection
from .components import Candidate, ComponentMap, connected_components, measure_candidates
from .detector import Plate, SpecimenImage, detect_specimens, load_plate, remove_border
from .filters import gaussian_blur, threshold, to_grayscale

__all__ = [
    "Candidate",
    "ComponentMap",
    "Plate",
    "SpecimenImage",
    "connected_components",
    "detect_specimens",
    "gaussian_blur",
    "load_plate",
    "measure_candidates",
    "remove_border",
    "threshold",
    "to_grayscale",
]
