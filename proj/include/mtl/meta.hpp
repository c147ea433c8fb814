#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "mtl/data.hpp"
#include "mtl/models.hpp"

namespace mtl {

enum class MetaMode { FirstOrder, SecondOrder };
enum class OptimizerKind { Adam, Sgd };

std::string_view mode_name(MetaMode m);
std::string_view optimizer_name(OptimizerKind k);
MetaMode parse_mode(std::string_view s);
OptimizerKind parse_optimizer(std::string_view s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-4;
  double clip_norm = 5.0;  // global-norm clipping; 0 disables
};

/// Step sizes and sampling controls for meta-transfer training.
struct MetaHyper {
  double alpha = 0.1;  // inner SGD step
  double beta = 1e-4;  // outer step
  std::size_t tasks_per_iter = 3;
  MetaMode mode = MetaMode::FirstOrder;
  int inner_steps = 1;
  OptimizerKind outer = OptimizerKind::Adam;
  double clip_norm = 5.0;
  std::size_t batch_size = 8;
  std::size_t val_batch_size = 8;
  Split val_split = Split::Train;  // split of the target task that supplies D_val
  TaskFilter train_tasks;        // tasks that supply D_tra

  void validate() const;
  OptimizerConfig outer_optimizer() const { return {outer, beta, clip_norm}; }
};

/// Everything a training loop needs to continue exactly where it stopped.
struct TrainState {
  Params params;
  std::int64_t iteration = 0;
  double best_val = std::numeric_limits<double>::infinity();
  int patience_used = 0;
  AdamState adam;
  std::mt19937_64 rng;

  static TrainState fresh(Params params, std::mt19937_64 rng);
  void save(const std::filesystem::path& dir) const;
  static TrainState load(const std::filesystem::path& dir);

  friend bool operator==(const TrainState& a, const TrainState& b);
};

/// θ' = θ − α∇L(θ) repeated inner_steps times on one task batch. θ is not
/// modified. Non-finite losses raise NumericError naming the task.
Params inner_adapt(const Params& params, const Objective& obj, const SeqBatch& batch, double alpha,
                   int inner_steps = 1, int task = -1);

struct TaskDiagnostics {
  int task = -1;
  double train_loss = 0.0;  // at θ
  double val_loss = 0.0;    // at θ'_i
  double grad_norm = 0.0;   // of this task's outer-gradient term
};

struct MetaGradient {
  GradMap grad;  // Σ_i ∇_θ L_val(θ'_i)
  std::vector<TaskDiagnostics> tasks;
};

/// Outer gradient of Σ_i L_val(θ − α∇L_tra_i(θ)).
///
/// First-order mode evaluates each term's gradient at θ'_i and treats it as
/// the gradient w.r.t. θ. Second-order mode also pulls it back through every
/// inner step, v ← (I − α∇²L_tra(θ_k)) v, using exact Hessian-vector
/// products. alpha = 0 is accepted here (θ'_i = θ).
MetaGradient meta_gradient(const Params& params, const Objective& obj,
                           std::span<const SeqBatch> train_batches, const SeqBatch& val_batch,
                           double alpha, MetaMode mode, int inner_steps = 1);

/// Applies one optimizer update (with clipping) to the state's parameters.
struct UpdateInfo {
  double grad_norm = 0.0;
  bool clipped = false;
};
UpdateInfo apply_update(TrainState& state, GradMap grad, const OptimizerConfig& opt);

struct MetaStepResult {
  std::vector<TaskDiagnostics> tasks;
  UpdateInfo update;
};

/// One iteration of meta-transfer learning: sample tasks_per_iter training
/// batches from hyper.train_tasks and one validation batch from the target
/// task, form the meta-gradient, and update θ with step size β.
MetaStepResult meta_step(TrainState& state, const TaskSet& tasks, const MetaHyper& hyper,
                         const Objective& obj);

/// One optimizer step on a batch sampled uniformly from the included tasks.
/// Returns the batch loss before the update.
double joint_step(TrainState& state, const TaskSet& tasks, const TaskFilter& include,
                  const OptimizerConfig& opt, std::size_t batch_size, const Objective& obj);

/// Same update from an explicit batch.
double joint_update(TrainState& state, const SeqBatch& batch, const OptimizerConfig& opt,
                    const Objective& obj);

/// Epoch-level schedule with early stopping. Training stops once
/// `stop_after` consecutive epochs fail to improve the validation loss;
/// every non-improving epoch multiplies the learning rate by `decay`.
struct PlateauSchedule {
  double lr = 1e-5;
  double decay = 1.0;
  int stop_after = 1;
  int max_epochs = 20;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double val_loss = 0.0;
  bool improved = false;
};

struct ScheduleResult {
  Params best;
  double initial_val = 0.0;
  double best_val = 0.0;
  std::vector<EpochRecord> history;
};

/// Generic driver: `epoch` trains one epoch from the given parameters at the
/// given rate, `evaluate` scores parameters. Returns the best-scoring
/// parameters seen, the starting point included.
ScheduleResult run_plateau_schedule(const Params& start,
                                    const std::function<Params(const Params&, double)>& epoch,
                                    const std::function<double(const Params&)>& evaluate,
                                    const PlateauSchedule& schedule);

struct FineTuneResult {
  TrainState state;
  ScheduleResult schedule;
};

/// Plain SGD on the target task's train split, early-stopped on its
/// validation split after patience+1 non-improving epochs. The state holds
/// the best-validation parameters afterwards.
FineTuneResult fine_tune(TrainState state, const TaskSet& tasks, std::size_t target, double lr,
                         int patience, int max_epochs, std::size_t batch_size, const Objective& obj);

/// SGD from lr 1.0, ×0.25 after each non-improving epoch, stop after five in a row.
FineTuneResult lm_fine_tune_schedule(TrainState state, const TaskSet& tasks, std::size_t target,
                                     std::size_t batch_size, const Objective& obj,
                                     int max_epochs = 30);

/// Mean loss over a split (first `limit` utterances, 0 = all), weighted by batch token counts.
double split_loss(const Params& params, const Objective& obj, const TaskSet& tasks,
                  std::size_t task, Split split, std::size_t batch_size, std::size_t limit = 0);

}  // namespace mtl
