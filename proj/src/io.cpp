#include "lsirt/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <variant>

#include "lsirt/errors.hpp"

namespace lsirt::io {
namespace {

constexpr std::uint16_t kVolumeVersion = 1;
constexpr std::uint16_t kSinogramVersion = 1;
constexpr std::uint16_t kModelVersion = 1;

void put_u16(std::string& s, std::uint16_t v) {
    s.push_back((char)(v & 0xff));
    s.push_back((char)(v >> 8));
}

void put_u32(std::string& s, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) s.push_back((char)((v >> (8 * k)) & 0xff));
}

void put_i64(std::string& s, std::int64_t v) {
    const auto u = (std::uint64_t)v;
    for (int k = 0; k < 8; ++k) s.push_back((char)((u >> (8 * k)) & 0xff));
}

void put_f32(std::string& s, float v) { put_u32(s, std::bit_cast<std::uint32_t>(v)); }

void put_f32_array(std::string& s, const float* v, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        const auto old = s.size();
        s.resize(old + 4 * n);
        std::memcpy(s.data() + old, v, 4 * n);
    } else {
        for (std::size_t j = 0; j < n; ++j) put_f32(s, v[j]);
    }
}

class Reader {
   public:
    Reader(const std::string& buf, const std::string& path) : b_(buf), path_(path) {}

    void magic(const char* want) {
        need(4);
        if (std::memcmp(b_.data() + pos_, want, 4) != 0)
            throw IoError(path_ + ": not a " + want + " file");
        pos_ += 4;
    }
    std::uint8_t u8() {
        need(1);
        return (std::uint8_t)b_[pos_++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = 0;
        for (int k = 0; k < 2; ++k) v |= (std::uint16_t)((std::uint8_t)b_[pos_ + k]) << (8 * k);
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= (std::uint32_t)((std::uint8_t)b_[pos_ + k]) << (8 * k);
        pos_ += 4;
        return v;
    }
    std::int64_t i64() {
        need(8);
        std::uint64_t v = 0;
        for (int k = 0; k < 8; ++k) v |= (std::uint64_t)((std::uint8_t)b_[pos_ + k]) << (8 * k);
        pos_ += 8;
        return (std::int64_t)v;
    }
    float f32() { return std::bit_cast<float>(u32()); }

    void f32_array(float* dst, std::size_t n) {
        need(4 * n);
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(dst, b_.data() + pos_, 4 * n);
            pos_ += 4 * n;
        } else {
            for (std::size_t j = 0; j < n; ++j) dst[j] = f32();
        }
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string out = b_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    void done() {
        if (pos_ != b_.size()) throw IoError(path_ + ": trailing bytes after payload");
    }
    const std::string& path() const { return path_; }

   private:
    void need(std::size_t n) {
        if (b_.size() - pos_ < n) throw IoError(path_ + ": truncated file");
    }
    const std::string& b_;
    std::string path_;
    std::size_t pos_ = 0;
};

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int checked_dim(const std::string& path, std::uint32_t v) {
    if (v == 0 || v > (std::uint32_t)std::numeric_limits<int>::max())
        throw IoError(path + ": bad dimension " + std::to_string(v));
    return (int)v;
}

}  // namespace

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    std::string out((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (f.bad()) throw IoError("read failed: " + path);
    return out;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(bytes.data(), (std::streamsize)bytes.size());
    f.flush();
    if (!f) throw IoError("write failed: " + path);
}

void write_volume(const std::string& path, const Volume& vol, ValueScale scale) {
    validate(vol.grid);
    std::string out;
    out.reserve(24 + 4 * vol.v.size());
    out += "TVOL";
    put_u16(out, kVolumeVersion);
    out.push_back((char)vol.grid.ndim);
    for (int a = 0; a < 3; ++a) put_u32(out, (std::uint32_t)vol.grid.dims[a]);
    put_f32(out, (float)vol.grid.pitch);
    out.push_back((char)scale);
    put_f32_array(out, vol.v.data(), vol.v.size());
    write_file(path, out);
}

VolumeFile read_volume(const std::string& path) {
    const std::string buf = read_file(path);
    Reader r(buf, path);
    r.magic("TVOL");
    if (r.u16() != kVolumeVersion) throw IoError(path + ": unsupported volume version");
    GridSpec g;
    g.ndim = r.u8();
    if (g.ndim != 2 && g.ndim != 3) throw IoError(path + ": dimensionality must be 2 or 3");
    for (int a = 0; a < 3; ++a) g.dims[a] = checked_dim(path, r.u32());
    if (g.ndim == 2 && g.dims[2] != 1) throw IoError(path + ": 2D volume with nz != 1");
    g.pitch = r.f32();
    if (!(g.pitch > 0.0) || !std::isfinite(g.pitch))
        throw IoError(path + ": bad voxel pitch");
    const std::uint8_t scale = r.u8();
    if (scale > 1) throw IoError(path + ": unknown value-scale tag");

    VolumeFile out;
    out.vol = make_volume(g);
    out.scale = (ValueScale)scale;
    r.f32_array(out.vol.v.data(), out.vol.v.size());
    r.done();
    return out;
}

void write_sinogram(const std::string& path, const Sinogram& s) {
    validate(s.geo);
    const std::string geo = geometry_to_text(s.geo);
    std::string out;
    out.reserve(10 + geo.size() + 4 * s.v.size());
    out += "TSIN";
    put_u16(out, kSinogramVersion);
    put_u32(out, (std::uint32_t)geo.size());
    out += geo;
    put_f32_array(out, s.v.data(), s.v.size());
    write_file(path, out);
}

Sinogram read_sinogram(const std::string& path) {
    const std::string buf = read_file(path);
    Reader r(buf, path);
    r.magic("TSIN");
    if (r.u16() != kSinogramVersion) throw IoError(path + ": unsupported sinogram version");
    const std::string geo_text = r.bytes(r.u32());
    Geometry geo;
    try {
        geo = geometry_from_text(geo_text);
    } catch (const ConfigError& e) {
        throw IoError(path + ": bad geometry block: " + e.what());
    }
    Sinogram s = make_sinogram(geo);
    r.f32_array(s.v.data(), s.v.size());
    r.done();
    return s;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

std::string angles_to_text(const std::vector<double>& angles) {
    std::string out;
    for (std::size_t i = 0; i < angles.size(); ++i) {
        if (i) out += ",";
        out += format_double(angles[i]);
    }
    return out;
}

}  // namespace

std::string geometry_to_text(const Geometry& g) {
    std::string out;
    if (const auto* p = std::get_if<ParallelGeometry2D>(&g)) {
        out += "type = parallel2d\n";
        out += "det_count = " + std::to_string(p->n_det) + "\n";
        out += "det_pitch = " + format_double(p->det_pitch) + "\n";
        out += "angles = " + angles_to_text(p->angles) + "\n";
    } else {
        const auto& c = std::get<ConeBeamGeometry>(g);
        out += "type = cone3d\n";
        out += "sad = " + format_double(c.sad) + "\n";
        out += "sdd = " + format_double(c.sdd) + "\n";
        out += "det_rows = " + std::to_string(c.det_rows) + "\n";
        out += "det_cols = " + std::to_string(c.det_cols) + "\n";
        out += "det_pitch = " + format_double(c.det_pitch) + "\n";
        out += "angles = " + angles_to_text(c.angles) + "\n";
    }
    return out;
}

Geometry geometry_from_text(const std::string& text) {
    const KeyValueMap kv(text);
    const std::string& type = kv.require("type");
    if (type == "parallel2d") {
        kv.check_known({"type", "det_count", "det_pitch", "angles"});
        ParallelGeometry2D p;
        p.n_det = (int)parse_int("det_count", kv.require("det_count"));
        p.det_pitch = parse_double("det_pitch", kv.require("det_pitch"));
        p.angles = parse_double_list("angles", kv.require("angles"));
        p.n_angles = (int)p.angles.size();
        validate(p);
        return p;
    }
    if (type == "cone3d") {
        kv.check_known({"type", "sad", "sdd", "det_rows", "det_cols", "det_pitch", "angles"});
        ConeBeamGeometry c;
        c.sad = parse_double("sad", kv.require("sad"));
        c.sdd = parse_double("sdd", kv.require("sdd"));
        c.det_rows = (int)parse_int("det_rows", kv.require("det_rows"));
        c.det_cols = (int)parse_int("det_cols", kv.require("det_cols"));
        c.det_pitch = parse_double("det_pitch", kv.require("det_pitch"));
        c.angles = parse_double_list("angles", kv.require("angles"));
        validate(c);
        return c;
    }
    throw ConfigError("geometry: unknown type '" + type + "'");
}

void write_model(const std::string& path, const nn::Model<float>& m,
                 const nn::AdamState<float>* adam) {
    const std::int64_t n_params = nn::param_count(m);
    std::string out;
    out.reserve(20 + 4 * (std::size_t)n_params * 3);
    out += "TNET";
    put_u16(out, kModelVersion);
    out.push_back((char)m.ndim);
    put_u32(out, (std::uint32_t)m.c_in);
    put_u32(out, (std::uint32_t)m.c_out);
    nn::for_each_param(m, [&](std::span<const float> p) {
        put_f32_array(out, p.data(), p.size());
    });
    if (adam) {
        if ((std::int64_t)adam->m.size() != n_params ||
            (std::int64_t)adam->v.size() != n_params)
            throw ConfigError("write_model: optimizer state size does not match the model");
        out.push_back((char)1);
        put_i64(out, adam->step);
        put_f32_array(out, adam->m.data(), adam->m.size());
        put_f32_array(out, adam->v.data(), adam->v.size());
    } else {
        out.push_back((char)0);
    }
    write_file(path, out);
}

ModelFile read_model(const std::string& path) {
    const std::string buf = read_file(path);
    Reader r(buf, path);
    r.magic("TNET");
    if (r.u16() != kModelVersion) throw IoError(path + ": unsupported checkpoint version");
    const int ndim = r.u8();
    const auto c_in = r.u32();
    const auto c_out = r.u32();
    ModelFile out;
    try {
        out.model = nn::make_model<float>(ndim, (int)c_in, (int)c_out);
    } catch (const ConfigError& e) {
        throw IoError(path + ": bad checkpoint header: " + e.what());
    }
    nn::for_each_param(out.model, [&](std::span<float> p) {
        r.f32_array(p.data(), p.size());
    });
    const std::uint8_t has_adam = r.u8();
    if (has_adam > 1) throw IoError(path + ": bad optimizer-state flag");
    if (has_adam) {
        auto adam = nn::make_adam(out.model);
        adam.step = r.i64();
        if (adam.step < 0) throw IoError(path + ": negative optimizer step count");
        r.f32_array(adam.m.data(), adam.m.size());
        r.f32_array(adam.v.data(), adam.v.size());
        out.adam = std::move(adam);
    }
    r.done();
    return out;
}

void write_pgm(const std::string& path, int width, int height,
               const std::vector<std::uint8_t>& pixels) {
    if (width <= 0 || height <= 0) throw ConfigError("write_pgm: non-positive size");
    if (pixels.size() != (std::size_t)width * height)
        throw ConfigError("write_pgm: pixel count does not match size");
    std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    out.append((const char*)pixels.data(), pixels.size());
    write_file(path, out);
}

KeyValueMap::KeyValueMap(const std::string& text) {
    std::size_t pos = 0;
    int line_no = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        const std::size_t end = nl == std::string::npos ? text.size() : nl;
        const std::string line = trim(text.substr(pos, end - pos));
        ++line_no;
        pos = end + 1;
        if (nl == std::string::npos && line.empty()) break;
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected 'key = value', got '" + line + "'");
        KeyValue kvp{trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
        if (kvp.key.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        if (find(kvp.key))
            throw ConfigError("config: duplicate key '" + kvp.key + "'");
        items_.push_back(std::move(kvp));
        if (nl == std::string::npos) break;
    }
}

const std::string* KeyValueMap::find(const std::string& key) const {
    for (const auto& kvp : items_)
        if (kvp.key == key) return &kvp.value;
    return nullptr;
}

const std::string& KeyValueMap::require(const std::string& key) const {
    const std::string* v = find(key);
    if (!v) throw ConfigError("config: missing key '" + key + "'");
    return *v;
}

void KeyValueMap::check_known(const std::vector<std::string>& allowed) const {
    for (const auto& kvp : items_) {
        bool ok = false;
        for (const auto& a : allowed) ok = ok || a == kvp.key;
        if (!ok) throw ConfigError("config: unknown key '" + kvp.key + "'");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    double out = 0.0;
    const char* begin = value.data();
    const char* end = begin + value.size();
    const auto res = std::from_chars(begin, end, out);
    if (res.ec != std::errc{} || res.ptr != end || !std::isfinite(out))
        throw ConfigError("config: key '" + key + "': not a finite number: '" + value + "'");
    return out;
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
    std::int64_t out = 0;
    const char* begin = value.data();
    const char* end = begin + value.size();
    const auto res = std::from_chars(begin, end, out);
    if (res.ec != std::errc{} || res.ptr != end)
        throw ConfigError("config: key '" + key + "': not an integer: '" + value + "'");
    return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= value.size()) {
        const std::size_t comma = value.find(',', pos);
        const std::size_t end = comma == std::string::npos ? value.size() : comma;
        out.push_back(parse_double(key, trim(value.substr(pos, end - pos))));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

}  // namespace lsirt::io
