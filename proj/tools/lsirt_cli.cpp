#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lsirt/classic_recon.hpp"
#include "lsirt/errors.hpp"
#include "lsirt/io.hpp"
#include "lsirt/lsirt.hpp"
#include "lsirt/metrics.hpp"
#include "lsirt/parallel.hpp"
#include "lsirt/phantoms.hpp"

using namespace lsirt;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t at = s.find(sep, pos);
        const std::size_t end = at == std::string::npos ? s.size() : at;
        out.push_back(s.substr(pos, end - pos));
        if (at == std::string::npos) break;
        pos = at + 1;
    }
    return out;
}

/// "low"/"mid"/"high" name a variance; a number is the noise sigma.
double noise_variance_arg(const std::string& s) {
    if (s == "none") return 0.0;
    if (s == "low") return 0.0025;
    if (s == "mid") return 0.0225;
    if (s == "high") return 0.0625;
    const double sigma = io::parse_double("--noise", s);
    if (sigma < 0.0) throw ConfigError("--noise: sigma must be >= 0");
    return sigma * sigma;
}

/// "cyl:cx,cy,cz,radius,half_length[,ax,ay,az]" or "box:cx,cy,cz,hx,hy,hz".
metrics::RoiSpec parse_roi(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos)
        throw ConfigError("roi '" + s + "': expected 'cyl:...' or 'box:...'");
    const std::string kind = s.substr(0, colon);
    std::vector<double> v;
    for (const auto& part : split(s.substr(colon + 1), ','))
        v.push_back(io::parse_double("roi", part));

    metrics::RoiSpec roi;
    if (kind == "cyl") {
        if (v.size() != 5 && v.size() != 8)
            throw ConfigError("roi '" + s + "': cyl needs 5 or 8 numbers");
        roi.shape = metrics::RoiSpec::Shape::cylinder;
        roi.center = {v[0], v[1], v[2]};
        roi.radius = v[3];
        roi.half_length = v[4];
        if (v.size() == 8) roi.axis = {v[5], v[6], v[7]};
    } else if (kind == "box") {
        if (v.size() != 6) throw ConfigError("roi '" + s + "': box needs 6 numbers");
        roi.shape = metrics::RoiSpec::Shape::box;
        roi.center = {v[0], v[1], v[2]};
        roi.half_extents = {v[3], v[4], v[5]};
    } else {
        throw ConfigError("roi '" + s + "': unknown shape '" + kind + "'");
    }
    return roi;
}

std::string with_suffix(const std::string& path, const std::string& suffix) {
    const fs::path p(path);
    fs::path out = p.parent_path() / p.stem();
    return out.string() + suffix + p.extension().string();
}

// ---------------------------------------------------------------------------
// Training configuration document

struct TrainSetup {
    std::string variant = "lsirt";
    std::string family = "triangles";
    std::string data_dir;
    std::int64_t data_count = 0;
    std::uint64_t data_seed = 0;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 0;
    GridSpec grid;
    Geometry geo;
    LsirtConfig cfg;
};

std::string lr_schedule_text(const std::vector<LrKnot>& ks) {
    std::string out;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (i) out += ",";
        out += io::format_double(ks[i].frac) + ":" + io::format_double(ks[i].lr);
    }
    return out;
}

std::vector<LrKnot> parse_lr_schedule(const std::string& s) {
    std::vector<LrKnot> out;
    for (const auto& part : split(s, ',')) {
        const auto colon = part.find(':');
        if (colon == std::string::npos)
            throw ConfigError("lr_schedule: expected 'frac:lr', got '" + part + "'");
        out.push_back({io::parse_double("lr_schedule", part.substr(0, colon)),
                       io::parse_double("lr_schedule", part.substr(colon + 1))});
    }
    return out;
}

std::string serialize_train_config(const TrainSetup& t) {
    const bool cone = std::holds_alternative<ConeBeamGeometry>(t.geo);
    std::string out;
    out += "variant = " + t.variant + "\n";
    out += "seed = " + std::to_string(t.seed) + "\n";
    out += "family = " + t.family + "\n";
    out += "data_dir = " + t.data_dir + "\n";
    out += "data_count = " + std::to_string(t.data_count) + "\n";
    out += "data_seed = " + std::to_string(t.data_seed) + "\n";
    out += "noise_variance = " + io::format_double(t.cfg.noise_variance) + "\n";
    out += "grid_dims = " + std::to_string(t.grid.dims[0]) + "," +
           std::to_string(t.grid.dims[1]) + "," + std::to_string(t.grid.dims[2]) + "\n";
    out += "grid_pitch = " + io::format_double(t.grid.pitch) + "\n";
    if (cone) {
        const auto& g = std::get<ConeBeamGeometry>(t.geo);
        out += "geometry = cone3d\n";
        out += "n_angles = " + std::to_string((int)g.angles.size()) + "\n";
        out += "det_rows = " + std::to_string(g.det_rows) + "\n";
        out += "det_cols = " + std::to_string(g.det_cols) + "\n";
        out += "det_pitch = " + io::format_double(g.det_pitch) + "\n";
        out += "sad = " + io::format_double(g.sad) + "\n";
        out += "sdd = " + io::format_double(g.sdd) + "\n";
    } else {
        const auto& g = std::get<ParallelGeometry2D>(t.geo);
        out += "geometry = parallel2d\n";
        out += "n_angles = " + std::to_string(g.n_angles) + "\n";
        out += "det_count = " + std::to_string(g.n_det) + "\n";
        out += "det_pitch = " + io::format_double(g.det_pitch) + "\n";
    }
    out += "alpha = " + io::format_double(t.cfg.alpha) + "\n";
    out += "omega = " + io::format_double(t.cfg.omega) + "\n";
    out += "n_warmup = " + std::to_string(t.cfg.n_warmup) + "\n";
    out += "n_total = " + std::to_string(t.cfg.n_total) + "\n";
    out += "batch_size = " + std::to_string(t.cfg.batch_size) + "\n";
    out += "n_train_steps = " + std::to_string(t.cfg.n_train_steps) + "\n";
    out += "lr_schedule = " + lr_schedule_text(t.cfg.lr_schedule) + "\n";
    out += "patch = " + std::to_string(t.cfg.patch[0]) + "," +
           std::to_string(t.cfg.patch[1]) + "," + std::to_string(t.cfg.patch[2]) + "\n";
    out += "checkpoint_every = " + std::to_string(t.checkpoint_every) + "\n";
    return out;
}

TrainSetup parse_train_config(const std::string& text) {
    const io::KeyValueMap kv(text);
    const std::string geom = kv.require("geometry");
    std::vector<std::string> allowed = {
        "variant",     "seed",        "family",        "data_dir",
        "data_count",  "data_seed",   "noise_variance", "grid_dims",
        "grid_pitch",  "geometry",    "n_angles",      "det_pitch",
        "alpha",       "omega",       "n_warmup",      "n_total",
        "batch_size",  "n_train_steps", "lr_schedule", "patch",
        "checkpoint_every"};
    if (geom == "parallel2d")
        allowed.push_back("det_count");
    else if (geom == "cone3d") {
        for (const char* k : {"det_rows", "det_cols", "sad", "sdd"}) allowed.push_back(k);
    } else {
        throw ConfigError("config: geometry must be parallel2d or cone3d");
    }
    kv.check_known(allowed);

    TrainSetup t;
    t.variant = kv.require("variant");
    if (t.variant != "lsirt" && t.variant != "lsirt-star")
        throw ConfigError("config: variant must be lsirt or lsirt-star");
    t.family = kv.require("family");
    if (t.family != "triangles" && t.family != "ellipsoids" && t.family != "files")
        throw ConfigError("config: family must be triangles, ellipsoids or files");
    if (const auto* d = kv.find("data_dir")) t.data_dir = *d;
    if (t.family == "files" && t.data_dir.empty())
        throw ConfigError("config: family=files requires data_dir");
    t.data_count = io::parse_int("data_count", kv.require("data_count"));
    t.data_seed = (std::uint64_t)io::parse_int("data_seed", kv.require("data_seed"));
    t.seed = (std::uint64_t)io::parse_int("seed", kv.require("seed"));
    if (const auto* c = kv.find("checkpoint_every"))
        t.checkpoint_every = io::parse_int("checkpoint_every", *c);

    const auto dims = io::parse_double_list("grid_dims", kv.require("grid_dims"));
    if (dims.size() != 3) throw ConfigError("config: grid_dims needs nx,ny,nz");
    const double pitch = io::parse_double("grid_pitch", kv.require("grid_pitch"));
    const int n_angles = (int)io::parse_int("n_angles", kv.require("n_angles"));
    const double det_pitch = io::parse_double("det_pitch", kv.require("det_pitch"));
    if (geom == "parallel2d") {
        if ((int)dims[2] != 1) throw ConfigError("config: parallel2d grid needs nz = 1");
        t.grid = make_grid_2d((int)dims[0], (int)dims[1], pitch);
        t.geo = make_parallel_geometry(
            n_angles, (int)io::parse_int("det_count", kv.require("det_count")), det_pitch);
    } else {
        t.grid = make_grid_3d((int)dims[0], (int)dims[1], (int)dims[2], pitch);
        t.geo = make_cone_geometry(
            n_angles, (int)io::parse_int("det_rows", kv.require("det_rows")),
            (int)io::parse_int("det_cols", kv.require("det_cols")), det_pitch,
            io::parse_double("sad", kv.require("sad")),
            io::parse_double("sdd", kv.require("sdd")));
    }

    t.cfg.alpha = io::parse_double("alpha", kv.require("alpha"));
    t.cfg.omega = io::parse_double("omega", kv.require("omega"));
    t.cfg.noise_variance = io::parse_double("noise_variance", kv.require("noise_variance"));
    t.cfg.n_warmup = (int)io::parse_int("n_warmup", kv.require("n_warmup"));
    t.cfg.n_total = (int)io::parse_int("n_total", kv.require("n_total"));
    t.cfg.batch_size = (int)io::parse_int("batch_size", kv.require("batch_size"));
    t.cfg.n_train_steps = io::parse_int("n_train_steps", kv.require("n_train_steps"));
    t.cfg.lr_schedule = parse_lr_schedule(kv.require("lr_schedule"));
    const auto patch = io::parse_double_list("patch", kv.require("patch"));
    if (patch.size() != 3) throw ConfigError("config: patch needs px,py,pz");
    t.cfg.patch = {(int)patch[0], (int)patch[1], (int)patch[2]};
    t.cfg.star = t.variant == "lsirt-star";
    return t;
}

std::string preset_text(const std::string& name) {
    auto paper_2d = [](const char* variance) {
        return std::string() +
               "variant = lsirt\nseed = 42\nfamily = triangles\ndata_dir =\n"
               "data_count = 10000\ndata_seed = 1000\nnoise_variance = " + variance +
               "\ngrid_dims = 128,128,1\ngrid_pitch = 1\ngeometry = parallel2d\n"
               "n_angles = 30\ndet_count = 185\ndet_pitch = 1\n"
               "alpha = 0.1\nomega = 0.04\nn_warmup = 50\nn_total = 100\nbatch_size = 8\n"
               "n_train_steps = 80000\nlr_schedule = 0:0.0002,0.5:0.0002,0.75:5e-05,1:0\n"
               "patch = 0,0,0\ncheckpoint_every = 5000\n";
    };
    if (name == "desk-2d")
        return "variant = lsirt\nseed = 42\nfamily = triangles\ndata_dir =\n"
               "data_count = 200\ndata_seed = 501\nnoise_variance = 0.0025\n"
               "grid_dims = 64,64,1\ngrid_pitch = 1\ngeometry = parallel2d\n"
               "n_angles = 20\ndet_count = 93\ndet_pitch = 1\n"
               "alpha = 0.1\nomega = 0.04\nn_warmup = 20\nn_total = 40\nbatch_size = 4\n"
               "n_train_steps = 2000\nlr_schedule = 0:0.0002,0.5:0.0002,0.75:5e-05,1:0\n"
               "patch = 0,0,0\ncheckpoint_every = 500\n";
    if (name == "desk-3d")
        return "variant = lsirt\nseed = 7\nfamily = ellipsoids\ndata_dir =\n"
               "data_count = 20\ndata_seed = 900\nnoise_variance = 0.0025\n"
               "grid_dims = 16,16,16\ngrid_pitch = 1\ngeometry = cone3d\n"
               "n_angles = 10\ndet_rows = 24\ndet_cols = 24\ndet_pitch = 2\n"
               "sad = 50\nsdd = 100\n"
               "alpha = 0.1\nomega = 0.04\nn_warmup = 2\nn_total = 5\nbatch_size = 2\n"
               "n_train_steps = 30\nlr_schedule = 0:0.0002,0.5:0.0002,0.75:5e-05,1:0\n"
               "patch = 0,0,0\ncheckpoint_every = 0\n";
    if (name == "paper-2d-triangles-low") return paper_2d("0.0025");
    if (name == "paper-2d-triangles-mid") return paper_2d("0.0225");
    if (name == "paper-2d-triangles-high") return paper_2d("0.0625");
    if (name == "paper-3d-128-low")
        return "variant = lsirt\nseed = 42\nfamily = ellipsoids\ndata_dir =\n"
               "data_count = 10000\ndata_seed = 2000\nnoise_variance = 0.0025\n"
               "grid_dims = 128,128,128\ngrid_pitch = 1\ngeometry = cone3d\n"
               "n_angles = 30\ndet_rows = 185\ndet_cols = 185\ndet_pitch = 1\n"
               "sad = 1000\nsdd = 1500\n"
               "alpha = 0.1\nomega = 0.04\nn_warmup = 50\nn_total = 100\nbatch_size = 8\n"
               "n_train_steps = 80000\nlr_schedule = 0:0.0002,0.5:0.0002,0.75:5e-05,1:0\n"
               "patch = 0,0,0\ncheckpoint_every = 5000\n";
    if (name == "paper-3d-256-low")
        return "variant = lsirt\nseed = 42\nfamily = ellipsoids\ndata_dir =\n"
               "data_count = 10000\ndata_seed = 2000\nnoise_variance = 0.0025\n"
               "grid_dims = 256,256,256\ngrid_pitch = 1\ngeometry = cone3d\n"
               "n_angles = 60\ndet_rows = 371\ndet_cols = 371\ndet_pitch = 1\n"
               "sad = 1000\nsdd = 1500\n"
               "alpha = 0.1\nomega = 0.04\nn_warmup = 50\nn_total = 100\nbatch_size = 8\n"
               "n_train_steps = 50000\nlr_schedule = 0:0.0001,1:0\n"
               "patch = 128,128,128\ncheckpoint_every = 5000\n";
    throw ConfigError("unknown preset '" + name +
                      "' (desk-2d, desk-3d, paper-2d-triangles-{low,mid,high}, "
                      "paper-3d-128-low, paper-3d-256-low)");
}

// ---------------------------------------------------------------------------
// Subcommands

struct PhantomOpts {
    std::string family, out;
    std::vector<int> dims;
    std::uint64_t seed = 1;
    double pitch = 1.0;
    double amplitude = 1.0;
};

void cmd_phantom(const PhantomOpts& o) {
    const bool is3d = o.family == "ellipsoids" || o.family == "shepp3d";
    const int ndim = is3d ? 3 : 2;
    std::vector<int> d = o.dims;
    if (d.size() == 1) d.assign((std::size_t)ndim, d[0]);
    if ((int)d.size() != ndim)
        throw ConfigError("phantom: family '" + o.family + "' needs " +
                          std::to_string(ndim) + " dims");
    const GridSpec grid = ndim == 2 ? make_grid_2d(d[0], d[1], o.pitch)
                                    : make_grid_3d(d[0], d[1], d[2], o.pitch);

    Volume vol;
    if (o.family == "triangles")
        vol = phantoms::triangles(o.seed, grid);
    else if (o.family == "ellipsoids")
        vol = phantoms::ellipsoids(o.seed, grid);
    else if (o.family == "shepp2d" || o.family == "shepp3d")
        vol = phantoms::shepp_logan(grid);
    else if (o.family == "gauss-square")
        vol = phantoms::gaussian_square(o.amplitude, grid);
    else
        throw ConfigError("phantom: unknown family '" + o.family + "'");

    io::write_volume(o.out, vol);
    std::cout << "wrote " << o.out << "\n";
}

struct SimulateOpts {
    std::string volume, out, geometry_file, noise = "0";
    std::uint64_t seed = 1;
    int n_angles = 0, n_det = 0, det_rows = 0, det_cols = 0;
    double det_pitch = 1.0, sad = 0.0, sdd = 0.0;
};

void cmd_simulate(const SimulateOpts& o) {
    const auto vf = io::read_volume(o.volume);
    Geometry geo;
    if (!o.geometry_file.empty()) {
        geo = io::geometry_from_text(io::read_file(o.geometry_file));
    } else if (vf.vol.grid.ndim == 2) {
        if (o.n_angles <= 0 || o.n_det <= 0)
            throw ConfigError("simulate: 2D input needs --angles and --det");
        geo = make_parallel_geometry(o.n_angles, o.n_det, o.det_pitch);
    } else {
        if (o.n_angles <= 0 || o.det_rows <= 0 || o.det_cols <= 0 || o.sad <= 0 || o.sdd <= 0)
            throw ConfigError(
                "simulate: 3D input needs --angles, --det-rows, --det-cols, --sad, --sdd");
        geo = make_cone_geometry(o.n_angles, o.det_rows, o.det_cols, o.det_pitch, o.sad, o.sdd);
    }
    if (geometry_ndim(geo) != vf.vol.grid.ndim)
        throw ShapeError("simulate: geometry dimensionality does not match the volume");

    Sinogram y = forward_project(vf.vol, geo);
    const double variance = noise_variance_arg(o.noise);
    if (variance > 0.0) y = phantoms::add_noise(y, variance, o.seed);
    io::write_sinogram(o.out, y);
    std::cout << "wrote " << o.out << "\n";
}

struct ReconstructOpts {
    std::string in, out, algo, model_path, filter = "ramp";
    int iters = 100;
    double cutoff = 1.0, alpha = 0.1, lambda = 0.0;
    std::vector<int> grid_dims;
    double grid_pitch = 1.0;
    std::vector<int> snapshots;
};

FilterKind parse_filter(const std::string& s) {
    if (s == "none") return FilterKind::none;
    if (s == "ramp") return FilterKind::ramp;
    if (s == "hann") return FilterKind::hann;
    throw ConfigError("--filter: expected none, ramp or hann");
}

void cmd_reconstruct(const ReconstructOpts& o) {
    const Sinogram y = io::read_sinogram(o.in);
    const int ndim = geometry_ndim(y.geo);
    if ((int)o.grid_dims.size() != ndim)
        throw ConfigError("reconstruct: --grid needs " + std::to_string(ndim) +
                          " values for this data");
    const GridSpec grid = ndim == 2
                              ? make_grid_2d(o.grid_dims[0], o.grid_dims[1], o.grid_pitch)
                              : make_grid_3d(o.grid_dims[0], o.grid_dims[1], o.grid_dims[2],
                                             o.grid_pitch);

    json info;
    info["algorithm"] = o.algo;
    info["threads"] = thread_count();
    info["input"] = o.in;
    info["output"] = o.out;

    const auto t0 = std::chrono::steady_clock::now();
    Volume x;
    if (o.algo == "fbp") {
        if (!std::holds_alternative<ParallelGeometry2D>(y.geo))
            throw ConfigError("reconstruct: fbp needs 2D parallel-beam data");
        if (!(o.cutoff > 0.0) || o.cutoff > 1.0)
            throw ConfigError("reconstruct: --cutoff must be in (0, 1]");
        x = fbp_2d(y, grid, FilterSpec{parse_filter(o.filter), o.cutoff});
        info["filter"] = o.filter;
        info["cutoff"] = o.cutoff;
    } else if (o.algo == "fdk") {
        if (!std::holds_alternative<ConeBeamGeometry>(y.geo))
            throw ConfigError("reconstruct: fdk needs cone-beam data");
        if (!(o.cutoff > 0.0) || o.cutoff > 1.0)
            throw ConfigError("reconstruct: --cutoff must be in (0, 1]");
        x = fdk_3d(y, grid, FilterSpec{parse_filter(o.filter), o.cutoff});
        info["filter"] = o.filter;
        info["cutoff"] = o.cutoff;
    } else if (o.algo == "sirt") {
        SirtConfig cfg;
        cfg.variant =
            o.lambda > 0.0 ? SirtConfig::Variant::fixed_step : SirtConfig::Variant::scaled;
        cfg.n_iter = o.iters;
        cfg.lambda = o.lambda;
        x = sirt(y, grid, cfg);
        info["iterations"] = o.iters;
        info["variant"] = o.lambda > 0.0 ? "fixed-step" : "scaled";
    } else if (o.algo == "lsirt") {
        if (o.model_path.empty()) throw ConfigError("reconstruct: lsirt needs --model");
        const auto mf = io::read_model(o.model_path);
        LsirtConfig cfg;
        cfg.alpha = o.alpha;
        cfg.n_warmup = 0;
        cfg.n_total = o.iters;
        for (int k : o.snapshots)
            if (k < 1 || k > o.iters)
                throw ConfigError("reconstruct: snapshot iteration " + std::to_string(k) +
                                  " outside 1.." + std::to_string(o.iters));
        std::vector<std::string> snap_files;
        const auto snap = [&](int k, const Volume& xi) {
            if (std::find(o.snapshots.begin(), o.snapshots.end(), k) == o.snapshots.end())
                return;
            const std::string path = with_suffix(o.out, "_iter" + std::to_string(k));
            io::write_volume(path, xi);
            snap_files.push_back(path);
        };
        x = lsirt::reconstruct(y, grid, mf.model, cfg, snap);
        info["iterations"] = o.iters;
        info["model"] = o.model_path;
        info["snapshots"] = snap_files;
    } else {
        throw ConfigError("reconstruct: unknown algorithm '" + o.algo + "'");
    }
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    info["seconds"] = dt.count();

    io::write_volume(o.out, x);
    io::write_file(o.out + ".json", info.dump(2) + "\n");
    std::cout << "wrote " << o.out << " (" << io::format_double(dt.count()) << " s)\n";
}

struct TrainOpts {
    std::string preset, config_path, out_dir;
    std::vector<std::string> sets;
    std::string variant, seed, steps;
};

void cmd_train(const TrainOpts& o) {
    if (o.preset.empty() == o.config_path.empty())
        throw ConfigError("train: pass exactly one of --preset or --config");
    if (o.out_dir.empty()) throw ConfigError("train: --out-dir is required");

    const std::string base =
        o.preset.empty() ? io::read_file(o.config_path) : preset_text(o.preset);
    io::KeyValueMap kv(base);
    std::vector<io::KeyValue> items = kv.items();
    auto set_value = [&](const std::string& key, const std::string& value) {
        for (auto& it : items)
            if (it.key == key) {
                it.value = value;
                return;
            }
        throw ConfigError("train: --set names a key absent from this config: '" + key + "'");
    };
    for (const auto& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("train: --set expects key=value, got '" + s + "'");
        std::string key = s.substr(0, eq), value = s.substr(eq + 1);
        while (!key.empty() && key.back() == ' ') key.pop_back();
        while (!value.empty() && value.front() == ' ') value.erase(value.begin());
        set_value(key, value);
    }
    if (!o.variant.empty()) set_value("variant", o.variant);
    if (!o.seed.empty()) set_value("seed", o.seed);
    if (!o.steps.empty()) set_value("n_train_steps", o.steps);

    std::string text;
    for (const auto& it : items) text += it.key + " = " + it.value + "\n";
    const TrainSetup t = parse_train_config(text);

    fs::create_directories(o.out_dir);
    const fs::path dir(o.out_dir);
    io::write_file((dir / "config.txt").string(), serialize_train_config(t));

    std::unique_ptr<Dataset> ds;
    if (t.family == "files") {
        std::vector<std::string> paths;
        for (const auto& e : fs::directory_iterator(t.data_dir))
            if (e.path().extension() == ".tvol") paths.push_back(e.path().string());
        std::sort(paths.begin(), paths.end());
        if (paths.empty()) throw ConfigError("train: no .tvol files in " + t.data_dir);
        std::vector<Volume> vols;
        for (const auto& p : paths) {
            auto vf = io::read_volume(p);
            if (vf.vol.grid.ndim != t.grid.ndim || vf.vol.grid.dims != t.grid.dims)
                throw ShapeError("train: " + p + " does not match the configured grid");
            vols.push_back(std::move(vf.vol));
        }
        ds = std::make_unique<MemoryDataset>(std::move(vols));
    } else {
        const auto family = t.family == "triangles" ? ProceduralDataset::Family::triangles
                                                    : ProceduralDataset::Family::ellipsoids;
        if (t.family == "triangles" && t.grid.ndim != 2)
            throw ConfigError("train: triangles need a 2D grid");
        if (t.family == "ellipsoids" && t.grid.ndim != 3)
            throw ConfigError("train: ellipsoids need a 3D grid");
        ds = std::make_unique<ProceduralDataset>(family, t.grid, t.data_seed, t.data_count);
    }

    std::ofstream csv(dir / "metrics.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot open for writing: " + (dir / "metrics.csv").string());
    csv << "step,loss,lr,wall_seconds\n";
    const auto t0 = std::chrono::steady_clock::now();
    const auto callback = [&](const TrainStepInfo& info, const nn::Model<float>& m) {
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
        csv << info.step << "," << io::format_double(info.loss) << ","
            << io::format_double(info.lr) << "," << io::format_double(dt.count()) << "\n";
        if (t.checkpoint_every > 0 && (info.step + 1) % t.checkpoint_every == 0)
            io::write_model(
                (dir / ("checkpoint_" + std::to_string(info.step + 1) + ".tnet")).string(), m);
    };

    const auto model = train(*ds, t.geo, t.grid, t.cfg, t.seed, callback);
    csv.flush();
    if (!csv) throw IoError("write failed: " + (dir / "metrics.csv").string());
    io::write_model((dir / "final.tnet").string(), model);
    std::cout << "trained " << t.variant << " for " << t.cfg.n_train_steps << " steps -> "
              << (dir / "final.tnet").string() << "\n";
}

struct EvalOpts {
    std::string recon, truth, metrics = "psnr,ssim", out = "-", csv, dft_out;
    std::string insert;
    std::vector<std::string> surrounds;
    std::string edge_roi;
    std::vector<double> edge_center;
    std::string plane = "coronal";
    int slice_index = -1;
    double data_range = 0.0;  // 0 = auto
};

metrics::Plane parse_plane(const std::string& s) {
    if (s == "axial") return metrics::Plane::axial;
    if (s == "coronal") return metrics::Plane::coronal;
    if (s == "sagittal") return metrics::Plane::sagittal;
    throw ConfigError("--plane: expected axial, coronal or sagittal");
}

void cmd_eval(const EvalOpts& o) {
    const auto rf = io::read_volume(o.recon);
    json report;
    report["recon"] = o.recon;

    std::vector<std::string> wanted = split(o.metrics, ',');
    const auto has = [&](const char* name) {
        return std::find(wanted.begin(), wanted.end(), name) != wanted.end();
    };
    for (const auto& m : wanted)
        if (m != "psnr" && m != "ssim" && m != "cnr" && m != "fwhm" && m != "dft-slice")
            throw ConfigError("eval: unknown metric '" + m + "'");

    std::optional<io::VolumeFile> tf;
    if (has("psnr") || has("ssim")) {
        if (o.truth.empty()) throw ConfigError("eval: psnr/ssim need --truth");
        tf = io::read_volume(o.truth);
        report["truth"] = o.truth;

        double range = o.data_range;
        std::string source = "flag";
        if (range == 0.0) {
            if (tf->scale == io::ValueScale::hu_scaled) {
                range = 2.0;
                source = "hu-default";
            } else {
                const auto [lo, hi] = std::minmax_element(tf->vol.v.begin(), tf->vol.v.end());
                range = (double)*hi - *lo;
                source = "truth-max-min";
            }
        }
        report["data_range"] = range;
        report["data_range_source"] = source;
        if (has("psnr")) {
            const double p = metrics::psnr(rf.vol, tf->vol, range);
            if (std::isinf(p))
                report["psnr"] = "inf";
            else
                report["psnr"] = p;
        }
        if (has("ssim")) report["ssim"] = metrics::ssim(rf.vol, tf->vol, range);
    }

    if (has("cnr")) {
        if (o.insert.empty() || o.surrounds.empty())
            throw ConfigError("eval: cnr needs --insert and at least one --surround");
        std::vector<metrics::RoiSpec> surround;
        for (const auto& s : o.surrounds) surround.push_back(parse_roi(s));
        report["cnr"] = metrics::cnr(rf.vol, parse_roi(o.insert), surround);
    }

    if (has("fwhm")) {
        if (o.edge_roi.empty()) throw ConfigError("eval: fwhm needs --edge-roi");
        const auto roi = parse_roi(o.edge_roi);
        std::array<double, 3> center = roi.center;
        if (!o.edge_center.empty()) {
            if (o.edge_center.size() != 3)
                throw ConfigError("eval: --edge-center needs cx,cy,cz");
            center = {o.edge_center[0], o.edge_center[1], o.edge_center[2]};
        }
        const auto res = metrics::edge_fwhm(rf.vol, roi, center);
        report["fwhm"] = {{"fwhm_mm", res.fwhm},
                          {"mu", res.fit.mu},
                          {"sigma", res.fit.sigma},
                          {"low", res.fit.low},
                          {"high", res.fit.high}};
    }

    if (has("dft-slice")) {
        int idx = o.slice_index;
        if (rf.vol.grid.ndim == 2 && idx < 0) idx = 0;
        if (idx < 0) throw ConfigError("eval: dft-slice needs --slice-index for 3D volumes");
        const auto img = metrics::dft_magnitude_slice(rf.vol, parse_plane(o.plane), idx);
        const float peak = *std::max_element(img.v.begin(), img.v.end());
        std::vector<std::uint8_t> bytes(img.v.size(), 0);
        if (peak > 0.0f)
            for (std::size_t j = 0; j < img.v.size(); ++j)
                bytes[j] = (std::uint8_t)std::clamp(
                    (int)std::floor(img.v[j] / peak * 255.0f), 0, 255);
        std::string path = o.dft_out;
        if (path.empty()) {
            const fs::path r(o.recon);
            path = (r.parent_path() / r.stem()).string() + "_dft.pgm";
        }
        io::write_pgm(path, img.w, img.h, bytes);
        report["dft_slice"] = {
            {"path", path}, {"w", img.w}, {"h", img.h}, {"plane", o.plane}, {"index", idx}};
    }

    const std::string text = report.dump(2) + "\n";
    if (o.out == "-")
        std::cout << text;
    else
        io::write_file(o.out, text);

    if (!o.csv.empty()) {
        const bool fresh = !fs::exists(o.csv);
        std::ofstream f(o.csv, std::ios::app);
        if (!f) throw IoError("cannot open for writing: " + o.csv);
        if (fresh) f << "recon,truth,psnr,ssim,cnr,fwhm_mm\n";
        auto cell = [&](const char* key) -> std::string {
            if (!report.contains(key)) return "";
            const auto& v = report[key];
            if (v.is_string()) return v.get<std::string>();
            return io::format_double(v.get<double>());
        };
        f << o.recon << "," << o.truth << "," << cell("psnr") << "," << cell("ssim") << ","
          << cell("cnr") << ","
          << (report.contains("fwhm") ? io::format_double(report["fwhm"]["fwhm_mm"].get<double>())
                                      : "")
          << "\n";
        if (!f) throw IoError("write failed: " + o.csv);
    }
}

struct ExportOpts {
    std::string volume, out, plane = "axial";
    std::vector<double> window;
    int slice_index = -1;
};

void cmd_export(const ExportOpts& o) {
    const auto vf = io::read_volume(o.volume);
    if (o.window.size() != 2) throw ConfigError("export: --window needs lo,hi");
    double lo = o.window[0], hi = o.window[1];
    if (!(lo < hi)) throw ConfigError("export: window lo must be < hi");
    // Window is given in HU for HU-scaled volumes; payloads stay untouched.
    if (vf.scale == io::ValueScale::hu_scaled) {
        lo *= 1e-3;
        hi *= 1e-3;
    }

    const auto& g = vf.vol.grid;
    int w = 0, h = 0, idx = o.slice_index;
    const auto plane = parse_plane(o.plane);
    if (g.ndim == 2) {
        if (plane != metrics::Plane::axial)
            throw ConfigError("export: 2D volumes only have the axial plane");
        if (idx > 0) throw ConfigError("export: 2D volumes have a single slice");
        idx = 0;
    } else if (idx < 0) {
        throw ConfigError("export: 3D volumes need --slice-index");
    }
    int fixed_n = 0;
    switch (plane) {
        case metrics::Plane::axial: w = g.dims[0]; h = g.dims[1]; fixed_n = g.dims[2]; break;
        case metrics::Plane::coronal: w = g.dims[0]; h = g.dims[2]; fixed_n = g.dims[1]; break;
        case metrics::Plane::sagittal: w = g.dims[1]; h = g.dims[2]; fixed_n = g.dims[0]; break;
    }
    if (idx >= fixed_n) throw ConfigError("export: slice index out of range");

    std::vector<std::uint8_t> bytes((std::size_t)w * h);
    for (int j = 0; j < h; ++j)
        for (int i = 0; i < w; ++i) {
            int ix = 0, iy = 0, iz = 0;
            switch (plane) {
                case metrics::Plane::axial: ix = i; iy = j; iz = idx; break;
                case metrics::Plane::coronal: ix = i; iy = idx; iz = j; break;
                case metrics::Plane::sagittal: ix = idx; iy = i; iz = j; break;
            }
            const double v = vf.vol.v[(std::size_t)vol_index(g, ix, iy, iz)];
            bytes[(std::size_t)j * w + i] =
                (std::uint8_t)std::clamp((int)std::floor((v - lo) / (hi - lo) * 255.0), 0, 255);
        }
    io::write_pgm(o.out, w, h, bytes);
    std::cout << "wrote " << o.out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tomographic reconstruction toolkit: projectors, FBP/FDK/SIRT baselines and "
                 "a learned SIRT variant"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Worker thread count (default: cores or LSIRT_THREADS)");

    PhantomOpts ph;
    auto* cph = app.add_subcommand("phantom", "Generate a deterministic test object");
    cph->add_option("family", ph.family,
                    "triangles | ellipsoids | shepp2d | shepp3d | gauss-square")
        ->required();
    cph->add_option("dims", ph.dims, "Grid size: one value per axis, or a single cube size")
        ->required()
        ->expected(1, 3);
    cph->add_option("--seed", ph.seed, "Generator seed");
    cph->add_option("--pitch", ph.pitch, "Voxel pitch in mm");
    cph->add_option("--amplitude", ph.amplitude, "gauss-square amplitude A");
    cph->add_option("-o,--out", ph.out, "Output volume file")->required();

    SimulateOpts sim;
    auto* csim = app.add_subcommand("simulate", "Forward-project a volume, optionally add noise");
    csim->add_option("volume", sim.volume, "Input volume file")->required();
    csim->add_option("--geometry-file", sim.geometry_file, "Geometry as a key-value document");
    csim->add_option("--angles", sim.n_angles, "Projection count (full circle, equidistant)");
    csim->add_option("--det", sim.n_det, "Detector bins (2D parallel)");
    csim->add_option("--det-rows", sim.det_rows, "Panel rows (3D cone)");
    csim->add_option("--det-cols", sim.det_cols, "Panel columns (3D cone)");
    csim->add_option("--det-pitch", sim.det_pitch, "Detector pitch in mm");
    csim->add_option("--sad", sim.sad, "Source-axis distance in mm");
    csim->add_option("--sdd", sim.sdd, "Source-detector distance in mm");
    csim->add_option("--noise", sim.noise, "none | low | mid | high, or a Gaussian sigma");
    csim->add_option("--seed", sim.seed, "Noise seed");
    csim->add_option("-o,--out", sim.out, "Output sinogram file")->required();

    ReconstructOpts rec;
    auto* crec = app.add_subcommand("reconstruct", "Reconstruct a volume from a sinogram");
    crec->add_option("sinogram", rec.in, "Input sinogram file")->required();
    crec->add_option("algo", rec.algo, "fbp | fdk | sirt | lsirt")->required();
    crec->add_option("--grid", rec.grid_dims, "Reconstruction grid (nx ny [nz])")
        ->required()
        ->expected(2, 3);
    crec->add_option("--grid-pitch", rec.grid_pitch, "Voxel pitch in mm");
    crec->add_option("--iters", rec.iters, "Iterations (sirt, lsirt)");
    crec->add_option("--filter", rec.filter, "fbp/fdk filter: none | ramp | hann");
    crec->add_option("--cutoff", rec.cutoff, "Filter cutoff, fraction of Nyquist in (0, 1]");
    crec->add_option("--model", rec.model_path, "Checkpoint for lsirt");
    crec->add_option("--alpha", rec.alpha, "lsirt damping factor");
    crec->add_option("--lambda", rec.lambda, "sirt fixed-step size (0 = auto)");
    crec->add_option("--snapshots", rec.snapshots, "Iterations at which to save intermediates")
        ->delimiter(',');
    crec->add_option("-o,--out", rec.out, "Output volume file")->required();

    TrainOpts tr;
    auto* ctr = app.add_subcommand("train", "Train the learned reconstruction network");
    ctr->add_option("--preset", tr.preset,
                    "desk-2d | desk-3d | paper-2d-triangles-{low,mid,high} | "
                    "paper-3d-128-low | paper-3d-256-low");
    ctr->add_option("--config", tr.config_path, "Full key-value config document");
    ctr->add_option("--set", tr.sets, "Override a config key, key=value")->take_all();
    ctr->add_option("--variant", tr.variant, "lsirt | lsirt-star");
    ctr->add_option("--seed", tr.seed, "Training seed override");
    ctr->add_option("--steps", tr.steps, "n_train_steps override");
    ctr->add_option("--out-dir", tr.out_dir, "Run directory for config/checkpoints/CSV")
        ->required();

    EvalOpts ev;
    auto* cev = app.add_subcommand("eval", "Compute image-quality metrics, emit a JSON report");
    cev->add_option("recon", ev.recon, "Reconstruction volume file")->required();
    cev->add_option("--truth", ev.truth, "Reference volume (psnr, ssim)");
    cev->add_option("--metrics", ev.metrics, "Comma list: psnr,ssim,cnr,fwhm,dft-slice");
    cev->add_option("--data-range", ev.data_range, "PSNR/SSIM range (default: see report)");
    cev->add_option("--insert", ev.insert, "cnr insert ROI, cyl:... or box:...");
    cev->add_option("--surround", ev.surrounds, "cnr surround ROI (repeatable)")->take_all();
    cev->add_option("--edge-roi", ev.edge_roi, "fwhm ROI containing the radial edge");
    cev->add_option("--edge-center", ev.edge_center, "fwhm polar center cx cy cz")
        ->expected(3);
    cev->add_option("--plane", ev.plane, "dft-slice plane: axial | coronal | sagittal");
    cev->add_option("--slice-index", ev.slice_index, "dft-slice index");
    cev->add_option("--dft-out", ev.dft_out, "dft-slice image path (default: <recon>_dft.pgm)");
    cev->add_option("-o,--out", ev.out, "JSON report path, or - for stdout");
    cev->add_option("--csv", ev.csv, "Append a summary row to this CSV");

    ExportOpts ex;
    auto* cex = app.add_subcommand("export", "Export a slice as an 8-bit PGM image");
    cex->add_option("volume", ex.volume, "Input volume file")->required();
    cex->add_option("--window", ex.window, "Display window lo hi (HU for HU-scaled files)")
        ->required()
        ->expected(2);
    cex->add_option("--plane", ex.plane, "axial | coronal | sagittal");
    cex->add_option("--slice-index", ex.slice_index, "Slice index (3D)");
    cex->add_option("-o,--out", ex.out, "Output PGM path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (threads > 0) set_thread_count(threads);
        if (cph->parsed()) cmd_phantom(ph);
        if (csim->parsed()) cmd_simulate(sim);
        if (crec->parsed()) cmd_reconstruct(rec);
        if (ctr->parsed()) cmd_train(tr);
        if (cev->parsed()) cmd_eval(ev);
        if (cex->parsed()) cmd_export(ex);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 4;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
