#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "crownseg/raster.hpp"
#include "crownseg/rng.hpp"

namespace crownseg {

struct SamplerConfig {
    std::size_t tile_size = 128;
    double grid_overlap = 0.98;
    double min_coverage = 0.10;
    std::size_t tiles_per_epoch = 2000;
    bool balance = true;

    void validate() const;
    std::size_t stride() const;
};

/// Co-registered training rasters sharing one extent.
struct TrainingRasters {
    Raster image;
    LabelMask labels;
    DistanceMap distance;
    ItcMask itc;
    std::size_t classes = 0;

    void validate() const;
};

struct TileOrigin {
    std::size_t x = 0;
    std::size_t y = 0;
    bool operator==(const TileOrigin&) const = default;
};

struct Tile {
    std::size_t size = 0;
    std::size_t bands = 0;
    std::vector<float> image; // B x T x T
    std::vector<std::int32_t> labels;
    std::vector<float> distance;
    std::vector<std::int32_t> itc;
    TileOrigin origin;
    std::int32_t anchor_class = -1; // class drawn first under balanced sampling

    bool operator==(const Tile&) const = default;
};

/// Origins on the regular grid whose tiles lie fully inside the raster.
std::vector<TileOrigin> grid_candidates(std::size_t raster_w, std::size_t raster_h, const SamplerConfig& cfg);

double coverage_fraction(std::span<const std::int32_t> labels);

Tile crop_tile(const TrainingRasters& src, TileOrigin origin, std::size_t size);

enum class AugmentOp { identity, rot90, rot180, rot270, flip_h, flip_v };
inline constexpr AugmentOp kAugmentOps[] = {AugmentOp::identity, AugmentOp::rot90,  AugmentOp::rot180,
                                            AugmentOp::rot270,   AugmentOp::flip_h, AugmentOp::flip_v};

/// Applies the same spatial transform to all four crops. rot90 is a quarter
/// turn counter-clockwise in image coordinates.
Tile augment(const Tile& tile, AugmentOp op);
/// Uniform choice among kAugmentOps.
Tile augment(const Tile& tile, Rng& rng);

// Draws tiles that meet the coverage threshold. Candidate origins and their
// per-class pixel counts are computed once; draws are with replacement.
class TileSampler {
public:
    /// Throws BalanceInfeasibleError when balancing is on and some class in
    /// the labels has no passing candidate.
    TileSampler(const TrainingRasters& src, const SamplerConfig& cfg);

    /// Balanced: uniform class among those present, then uniform origin among
    /// passing candidates containing that class. Otherwise uniform over all
    /// passing candidates.
    Tile draw(Rng& rng) const;
    TileOrigin draw_origin(Rng& rng, std::int32_t* anchor = nullptr) const;

    /// Removes `count` random passing candidates from the pools and returns
    /// them in draw order.
    std::vector<TileOrigin> hold_out(std::size_t count, Rng& rng);

    const std::vector<std::int32_t>& present_classes() const noexcept { return present_; }
    const std::vector<TileOrigin>& passing() const noexcept { return passing_; }
    std::size_t class_pool_size(std::int32_t cls) const;
    const SamplerConfig& config() const noexcept { return cfg_; }
    const TrainingRasters& source() const noexcept { return *src_; }

private:
    void rebuild_pools();

    const TrainingRasters* src_;
    SamplerConfig cfg_;
    std::vector<TileOrigin> passing_;
    std::vector<std::vector<std::uint32_t>> class_counts_; // per passing origin, per class
    std::vector<std::int32_t> present_;
    std::vector<std::vector<std::size_t>> pools_; // indices into passing_, per class
};

} // namespace crownseg
