from .brdf import (
    MIN_ROUGHNESS,
    bake_brdf_lut,
    default_lut,
    dominant_direction,
    fresnel_schlick,
    ggx_d,
    lookup_lut,
    reflect,
    smith_g,
    specular_f0,
)
from .envlight import (
    build_environment,
    constant_env,
    irradiance_sh,
    latlong_lookup,
    levels_lookup,
    lobe_env,
    prefilter_env,
    three_point_env,
    with_base,
)
from .render import (
    eval_diffuse,
    eval_indirect,
    eval_specular_direct,
    shade,
    shade_backward,
    visibility,
    visibility_map,
)

__all__ = [
    "MIN_ROUGHNESS",
    "bake_brdf_lut",
    "build_environment",
    "constant_env",
    "default_lut",
    "dominant_direction",
    "eval_diffuse",
    "eval_indirect",
    "eval_specular_direct",
    "fresnel_schlick",
    "ggx_d",
    "irradiance_sh",
    "latlong_lookup",
    "levels_lookup",
    "lobe_env",
    "lookup_lut",
    "prefilter_env",
    "reflect",
    "shade",
    "shade_backward",
    "smith_g",
    "specular_f0",
    "three_point_env",
    "visibility",
    "visibility_map",
    "with_base",
]
