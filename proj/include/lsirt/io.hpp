#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lsirt/geometry.hpp"
#include "lsirt/nn.hpp"
#include "lsirt/volume.hpp"

namespace lsirt::io {

/// What the f32 payload of a volume file holds: raw algorithm-domain values,
/// or attenuation imported from Hounsfield units at the conventional 1e-3
/// scale. The tag travels with the file; no module rescales payloads.
enum class ValueScale : std::uint8_t { raw = 0, hu_scaled = 1 };

struct VolumeFile {
    Volume vol;
    ValueScale scale = ValueScale::raw;
};

/// "TVOL" container: u16 version, u8 dimensionality, 3 x u32 dims (unused
/// axes 1), f32 pitch in mm, u8 value-scale tag, then row-major f32 voxels.
/// All fields little-endian. write -> read -> write is byte-identical.
void write_volume(const std::string& path, const Volume& vol,
                  ValueScale scale = ValueScale::raw);
VolumeFile read_volume(const std::string& path);

/// "TSIN" container: u16 version, length-prefixed geometry text block (the
/// key-value document of geometry_to_text), then the angle-major f32 payload.
void write_sinogram(const std::string& path, const Sinogram& s);
Sinogram read_sinogram(const std::string& path);

/// Human-readable key-value geometry description; doubles are printed with
/// enough digits to round-trip exactly.
std::string geometry_to_text(const Geometry& g);
Geometry geometry_from_text(const std::string& text);

struct ModelFile {
    nn::Model<float> model;
    std::optional<nn::AdamState<float>> adam;
};

/// "TNET" checkpoint: u16 version, u8 dimensionality, u32 c_in, u32 c_out,
/// then every parameter array in declaration order as f32, then a u8 flag
/// and, when set, the Adam moment vectors and step counter.
void write_model(const std::string& path, const nn::Model<float>& m,
                 const nn::AdamState<float>* adam = nullptr);
ModelFile read_model(const std::string& path);

/// Binary 8-bit PGM (P5).
void write_pgm(const std::string& path, int width, int height,
               const std::vector<std::uint8_t>& pixels);

struct KeyValue {
    std::string key, value;
};

/// Order-preserving "key = value" document. Blank lines and lines starting
/// with '#' are skipped; duplicate or empty keys are rejected (ConfigError).
class KeyValueMap {
   public:
    explicit KeyValueMap(const std::string& text);

    const std::string* find(const std::string& key) const;
    const std::string& require(const std::string& key) const;
    /// ConfigError naming the first key outside `allowed`.
    void check_known(const std::vector<std::string>& allowed) const;
    const std::vector<KeyValue>& items() const { return items_; }

   private:
    std::vector<KeyValue> items_;
};

/// Strict full-string numeric parsing; ConfigError mentions the key.
double parse_double(const std::string& key, const std::string& value);
std::int64_t parse_int(const std::string& key, const std::string& value);
std::vector<double> parse_double_list(const std::string& key, const std::string& value);

std::string format_double(double v);

/// Whole-file helpers; failures throw IoError with the path.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace lsirt::io
