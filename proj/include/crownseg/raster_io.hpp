#pragma once

#include <string>
#include <vector>

#include "crownseg/raster.hpp"

namespace crownseg {

// Little-endian raster files. Each starts with a 4-byte magic and u32
// extents; payloads are row-major, band- or class-sequential where relevant.
//   HSC1  width height bands   f32 cube
//   LBL1  width height         i32 labels, -1 unlabeled
//   ITC1  width height         i32 instance ids, 0 background
//   DST1  width height         f32 distances
//   PRB1  width height classes f32 probabilities
// Decoding raises FormatError (bad magic, trailing bytes), LengthError
// (truncation), ParameterError (extents overflow) or ValidationError
// (out-of-domain values).

std::vector<char> encode_hsc(const Raster& r);
std::vector<char> encode_lbl(const LabelMask& m);
std::vector<char> encode_itc(const ItcMask& m);
std::vector<char> encode_dst(const DistanceMap& m);
std::vector<char> encode_prb(const ProbabilityVolume& p);

Raster decode_hsc(const std::vector<char>& bytes);
LabelMask decode_lbl(const std::vector<char>& bytes);
ItcMask decode_itc(const std::vector<char>& bytes);
DistanceMap decode_dst(const std::vector<char>& bytes);
ProbabilityVolume decode_prb(const std::vector<char>& bytes);

void write_hsc(const std::string& path, const Raster& r);
void write_lbl(const std::string& path, const LabelMask& m);
void write_itc(const std::string& path, const ItcMask& m);
void write_dst(const std::string& path, const DistanceMap& m);
void write_prb(const std::string& path, const ProbabilityVolume& p);

Raster read_hsc(const std::string& path);
LabelMask read_lbl(const std::string& path);
ItcMask read_itc(const std::string& path);
DistanceMap read_dst(const std::string& path);
ProbabilityVolume read_prb(const std::string& path);

/// First four bytes of a file, or an empty string if it is shorter.
std::string peek_magic(const std::string& path);

} // namespace crownseg
