#include "crownseg/raster_io.hpp"

#include <fstream>
#include <limits>

#include "crownseg/binary_io.hpp"
#include "crownseg/error.hpp"
#include "crownseg/losses.hpp"

namespace crownseg {

namespace {

// Largest element count accepted from a header (4 GiB of 32-bit values).
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 30;

void expect_magic(ByteReader& in, const char* magic) {
    in.need(4);
    const auto got = in.bytes(4);
    if (got != magic) throw FormatError("bad magic at offset 0: expected '" + std::string(magic) + "'");
}

std::size_t checked_count(std::initializer_list<std::uint32_t> extents) {
    std::uint64_t n = 1;
    for (auto e : extents) {
        if (e == 0) throw ParameterError("raster extents must be positive");
        n *= e;
        if (n > kMaxElements) throw ParameterError("raster extents overflow the supported size");
    }
    return static_cast<std::size_t>(n);
}

void expect_end(const ByteReader& in) {
    if (in.remaining() != 0)
        throw FormatError("unexpected trailing bytes at offset " + std::to_string(in.offset()));
}

std::uint32_t extent(std::size_t v) {
    if (v == 0 || v > std::numeric_limits<std::uint32_t>::max())
        throw ParameterError("raster extent " + std::to_string(v) + " cannot be encoded");
    return static_cast<std::uint32_t>(v);
}

template <typename M>
std::vector<char> encode_ints(const char* magic, const M& m) {
    ByteWriter out;
    out.bytes(magic);
    out.u32(extent(m.width));
    out.u32(extent(m.height));
    for (auto v : m.data) out.i32(v);
    return out.buffer();
}

template <typename M>
M decode_ints(const std::vector<char>& bytes, const char* magic, std::int32_t min_value, const char* what) {
    ByteReader in(bytes);
    expect_magic(in, magic);
    const auto w = in.u32(), h = in.u32();
    const auto n = checked_count({w, h});
    in.need(n * 4);
    M m(w, h);
    for (std::size_t i = 0; i < n; ++i) {
        const auto off = in.offset();
        m.data[i] = in.i32();
        if (m.data[i] < min_value)
            throw ValidationError(std::string(what) + " value " + std::to_string(m.data[i]) + " at offset " +
                                  std::to_string(off) + " is below " + std::to_string(min_value));
    }
    expect_end(in);
    return m;
}

} // namespace

std::vector<char> encode_hsc(const Raster& r) {
    ByteWriter out;
    out.bytes("HSC1");
    out.u32(extent(r.width));
    out.u32(extent(r.height));
    out.u32(extent(r.bands));
    for (float v : r.data) out.f32(v);
    return out.buffer();
}

Raster decode_hsc(const std::vector<char>& bytes) {
    ByteReader in(bytes);
    expect_magic(in, "HSC1");
    const auto w = in.u32(), h = in.u32(), b = in.u32();
    const auto n = checked_count({w, h, b});
    in.need(n * 4);
    Raster r(w, h, b);
    for (auto& v : r.data) v = in.f32();
    expect_end(in);
    return r;
}

std::vector<char> encode_lbl(const LabelMask& m) { return encode_ints("LBL1", m); }
LabelMask decode_lbl(const std::vector<char>& bytes) {
    return decode_ints<LabelMask>(bytes, "LBL1", kUnlabeled, "label");
}

std::vector<char> encode_itc(const ItcMask& m) { return encode_ints("ITC1", m); }
ItcMask decode_itc(const std::vector<char>& bytes) { return decode_ints<ItcMask>(bytes, "ITC1", 0, "instance id"); }

std::vector<char> encode_dst(const DistanceMap& m) {
    ByteWriter out;
    out.bytes("DST1");
    out.u32(extent(m.width));
    out.u32(extent(m.height));
    for (float v : m.data) out.f32(v);
    return out.buffer();
}

DistanceMap decode_dst(const std::vector<char>& bytes) {
    ByteReader in(bytes);
    expect_magic(in, "DST1");
    const auto w = in.u32(), h = in.u32();
    const auto n = checked_count({w, h});
    in.need(n * 4);
    DistanceMap m(w, h);
    for (auto& v : m.data) v = in.f32();
    expect_end(in);
    return m;
}

std::vector<char> encode_prb(const ProbabilityVolume& p) {
    ByteWriter out;
    out.bytes("PRB1");
    out.u32(extent(p.width));
    out.u32(extent(p.height));
    out.u32(extent(p.classes));
    for (float v : p.data) out.f32(v);
    return out.buffer();
}

ProbabilityVolume decode_prb(const std::vector<char>& bytes) {
    ByteReader in(bytes);
    expect_magic(in, "PRB1");
    const auto w = in.u32(), h = in.u32(), c = in.u32();
    const auto n = checked_count({w, h, c});
    in.need(n * 4);
    ProbabilityVolume p(w, h, c);
    for (auto& v : p.data) v = in.f32();
    expect_end(in);
    return p;
}

void write_hsc(const std::string& path, const Raster& r) { write_file_bytes(path, encode_hsc(r)); }
void write_lbl(const std::string& path, const LabelMask& m) { write_file_bytes(path, encode_lbl(m)); }
void write_itc(const std::string& path, const ItcMask& m) { write_file_bytes(path, encode_itc(m)); }
void write_dst(const std::string& path, const DistanceMap& m) { write_file_bytes(path, encode_dst(m)); }
void write_prb(const std::string& path, const ProbabilityVolume& p) { write_file_bytes(path, encode_prb(p)); }

Raster read_hsc(const std::string& path) { return decode_hsc(read_file_bytes(path)); }
LabelMask read_lbl(const std::string& path) { return decode_lbl(read_file_bytes(path)); }
ItcMask read_itc(const std::string& path) { return decode_itc(read_file_bytes(path)); }
DistanceMap read_dst(const std::string& path) { return decode_dst(read_file_bytes(path)); }
ProbabilityVolume read_prb(const std::string& path) { return decode_prb(read_file_bytes(path)); }

std::string peek_magic(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    char buf[4];
    in.read(buf, 4);
    if (in.gcount() != 4) return {};
    return std::string(buf, 4);
}

} // namespace crownseg
