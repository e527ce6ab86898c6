from .world import (
    CoolingReport,
    DemUnstable,
    DemWorld,
    Material,
    PlateBody,
    agitate_and_settle,
    contact_force,
    load_profile,
    plate_reaction,
    run,
    spawn_bed,
    stability_dt_bound,
    step,
    surface_height,
    world_from_profile,
)
from .backend import backend_name

__all__ = [
    "CoolingReport", "DemUnstable", "DemWorld", "Material", "PlateBody",
    "agitate_and_settle", "backend_name", "contact_force", "load_profile",
    "plate_reaction", "run", "spawn_bed", "stability_dt_bound", "step",
    "surface_height", "world_from_profile",
]
