#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "lsirt/geometry.hpp"
#include "lsirt/nn.hpp"
#include "lsirt/phantoms.hpp"
#include "lsirt/projector.hpp"
#include "lsirt/random.hpp"
#include "lsirt/volume.hpp"

namespace lsirt {

/// Piecewise-linear learning-rate schedule knot; frac is the completed
/// fraction of training in [0, 1].
struct LrKnot {
    double frac;
    double lr;
};

struct LsirtConfig {
    double alpha = 0.1;
    int n_warmup = 50;                  // no-gradient steps applied to fresh batch elements
    int n_total = 100;                  // iterations per reconstruction / expected element lifetime + warmup
    int batch_size = 8;
    std::int64_t n_train_steps = 80000;
    double omega = 0.04;                // second-channel loss weight; ignored for single-output models
    double noise_variance = 0.0025;     // Gaussian variance added to simulated training data
    bool star = false;                  // single-channel ablation: g(x) only, omega = 0
    std::array<int, 3> patch = {0, 0, 0};  // 3D: train on aligned patches of this size; 0 = full volume
    std::vector<LrKnot> lr_schedule = {{0.0, 2e-4}, {0.5, 2e-4}, {0.75, 5e-5}, {1.0, 0.0}};
};

void validate(const LsirtConfig& cfg);

/// Learning rate at completed-fraction f, linearly interpolated between knots.
double lr_at(const LsirtConfig& cfg, double f);

/// Ground-truth volumes for training/evaluation.
class Dataset {
  public:
    virtual ~Dataset() = default;
    virtual std::int64_t size() const = 0;
    virtual Volume get(std::int64_t index) const = 0;
};

/// Procedurally generated phantoms; element i uses seed base_seed + i.
class ProceduralDataset final : public Dataset {
  public:
    enum class Family { triangles, ellipsoids };
    ProceduralDataset(Family family, GridSpec grid, std::uint64_t base_seed, std::int64_t count);
    std::int64_t size() const override { return count_; }
    Volume get(std::int64_t index) const override;
    const GridSpec& grid() const { return grid_; }

  private:
    Family family_;
    GridSpec grid_;
    std::uint64_t seed_;
    std::int64_t count_;
};

/// Fixed list of volumes (e.g. loaded from files).
class MemoryDataset final : public Dataset {
  public:
    explicit MemoryDataset(std::vector<Volume> items) : items_(std::move(items)) {}
    std::int64_t size() const override { return (std::int64_t)items_.size(); }
    Volume get(std::int64_t index) const override { return items_.at(index); }

  private:
    std::vector<Volume> items_;
};

struct BatchElement {
    Volume x;     // current iterate
    Volume h;     // previous iterate, zero right after (re)initialization
    Sinogram y;
    Volume t;     // ground truth
    int age = 0;  // applied iterations
};

struct StepResult {
    Volume x_next;
    nn::Tensor<float> gamma;
};

/// One learned iteration: p = C A^T R (y - A x), gamma = g(x, h, p) (or g(x)
/// for single-input models), x_next = (1 - alpha) x + alpha gamma_0 + p.
/// Pass a tape (and optionally input_out) to enable a backward pass through
/// the network call. Non-finite x_next aborts with NumericError.
StepResult lsirt_step(const Volume& x, const Volume& h, const Sinogram& y,
                      const nn::Model<float>& model, const SirtScaling& sc, double alpha,
                      nn::Tape<float>* tape = nullptr, nn::Tensor<float>* input_out = nullptr);

/// Fresh training element: pick a dataset image, simulate noisy data, then
/// apply n_warmup steps without recording gradients.
BatchElement create_batch_element(const Dataset& ds, const Geometry& geo,
                                  const nn::Model<float>& model, const SirtScaling& sc,
                                  const LsirtConfig& cfg, std::uint64_t seed);

/// Decides the per-step batch replacement: returns the slot to refresh, or -1.
/// Replacement probability is min(1, batch_size / (n_total - n_warmup)).
int replacement_slot(RandomStream& rs, const LsirtConfig& cfg);

struct TrainStepInfo {
    std::int64_t step;  // 0-based
    double loss;        // batch-mean log-loss
    double lr;
    int replaced_slot;  // -1 when no element was refreshed this step
};

using TrainCallback = std::function<void(const TrainStepInfo&, const nn::Model<float>&)>;

/// Algorithm-1 training loop. Builds and returns the model (Kaiming-init from
/// seed); deterministic for fixed (seed, thread count). NumericError aborts
/// carry the failing step index.
nn::Model<float> train(const Dataset& ds, const Geometry& geo, const GridSpec& grid,
                       const LsirtConfig& cfg, std::uint64_t seed,
                       const TrainCallback& callback = nullptr);

using SnapshotCallback = std::function<void(int iter, const Volume& x)>;

/// Applies n_total learned iterations from x = 0, h = 0.
Volume reconstruct(const Sinogram& y, const GridSpec& grid, const nn::Model<float>& model,
                   const LsirtConfig& cfg, const SnapshotCallback& snapshot = nullptr);

/// Network forward in overlapping tiles, cropped by `margin` at interior tile
/// edges; equals the monolithic forward exactly. margin >= 3 (the receptive
/// radius); every tile axis must be >= 2 * margin + 1.
nn::Tensor<float> apply_tiled(const nn::Model<float>& model, const nn::Tensor<float>& input,
                              std::array<int, 3> tile, int margin);

}  // namespace lsirt
