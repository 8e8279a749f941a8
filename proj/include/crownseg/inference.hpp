#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "crownseg/network.hpp"
#include "crownseg/raster.hpp"

namespace crownseg {

/// Sliding-window geometry for one overlap ratio along one axis.
struct StitchPlan {
    std::size_t tile = 0;
    double overlap = 0.0;
    std::size_t stride = 0; // round(T * (1 - overlap))
    std::size_t margin = 0; // floor(T * overlap / 2), also the leading pad
    std::size_t tiles = 0;  // ceil(extent / stride)
    std::size_t padded = 0; // max(extent + 2 * margin, (tiles - 1) * stride + T)

    static StitchPlan make(std::size_t extent, std::size_t tile, double overlap);
};

struct ScenePrediction {
    ProbabilityVolume probs;
    std::optional<DistanceMap> distance;
};

/// Tile k along an axis keeps scene rows/columns [k*s, (k+1)*s) from its
/// window starting at padded coordinate k*s, so every scene pixel is written
/// exactly once. The scene is reflect-padded. `order_seed` shuffles the
/// order in which tiles are processed; the result does not depend on it.
ScenePrediction stitch_predict(const TilePredictor& model, const Raster& raster, std::size_t tile, double overlap,
                               std::optional<std::uint64_t> order_seed = std::nullopt);

/// Mean of the per-overlap predictions, renormalised per pixel. A single
/// overlap returns stitch_predict unchanged.
ScenePrediction fused_predict(const TilePredictor& model, const Raster& raster, std::size_t tile,
                              const std::vector<double>& overlaps = {0.10, 0.30, 0.50});

/// Per-pixel arg-max; ties go to the lowest class id.
LabelMask argmax_map(const ProbabilityVolume& probs);

} // namespace crownseg
