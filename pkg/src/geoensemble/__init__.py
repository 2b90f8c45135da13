"""Global-grid ensembling of geolocation predictors and recall-vs-area evaluation."""

from .attribmask import (
    BucketSpec,
    CellPolygon,
    CellRect,
    ClassMaskSet,
    MergeMap,
    apply_buckets,
    apply_merge,
    build_buckets,
    default_merge_map,
    mask_area,
    rasterize_cells,
)
from .ensemble import Factor, FactorizedMap, assemble, densify, product, uniform_factor, urban_prior
from .evalrva import (
    EvalRecord,
    RvACurve,
    gcd_recall,
    gcd_top1,
    min_containing_area,
    per_bucket_breakdown,
    rebalance,
    rva_curve,
)
from .geogrid import (
    EARTH_RADIUS_KM,
    GeoPoint,
    GlobalGrid,
    PixelAreaMap,
    great_circle_distance,
    latlon_to_index,
    pixel_area,
    spherical_cap_area,
)
from .gridio import (
    ImageManifest,
    ScoreVector,
    downsample_mode,
    downsample_nearest,
    label_images,
    read_manifest,
    read_raster,
    read_scores,
    write_raster,
)

__version__ = "0.1.0"
