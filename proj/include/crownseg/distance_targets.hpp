#pragma once

#include <cstdint>

#include "crownseg/raster.hpp"

namespace crownseg {

using BinaryMask = Grid<std::uint8_t>;
using RealMap = Grid<double>;

struct DistanceTargetOptions {
    double sigma = 1.0;
    int radius = 2;
};

/// Exact Euclidean distance transform. Every non-zero pixel receives the
/// distance between its centre and the nearest zero pixel centre; pixels just
/// outside the image count as zero, so an edge pixel is at most 1 away.
/// Squared distances are computed in integer arithmetic.
RealMap edt(const BinaryMask& binary);

/// Convolution with the truncated Gaussian of the given sigma and radius,
/// normalised to unit sum, with reflect-101 borders. sigma == 0 or
/// radius == 0 leaves the map unchanged.
RealMap gaussian_smooth(const RealMap& map, double sigma, int radius);

/// Divides every instance's values by that instance's maximum, zero outside
/// instances. Throws DegenerateInstanceError for an instance whose maximum is
/// not strictly positive.
DistanceMap normalize_per_itc(const RealMap& map, const ItcMask& itc);
DistanceMap normalize_per_itc(const DistanceMap& map, const ItcMask& itc);

/// Binary crown mask -> EDT -> Gaussian smoothing -> per-crown normalisation.
DistanceMap make_distance_target(const ItcMask& itc, const DistanceTargetOptions& opts = {});

/// Checks that instance ids are non-negative and form the contiguous set 1..K.
void validate_itc_mask(const ItcMask& itc);

/// Renumbers the instances present in `itc` to 1..K preserving id order.
ItcMask compact_itc_ids(const ItcMask& itc);

} // namespace crownseg
