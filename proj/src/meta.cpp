#include "mtl/meta.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace mtl {

std::string_view mode_name(MetaMode m) {
  return m == MetaMode::FirstOrder ? "first_order" : "second_order";
}

std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

MetaMode parse_mode(std::string_view s) {
  if (s == "first_order") return MetaMode::FirstOrder;
  if (s == "second_order") return MetaMode::SecondOrder;
  throw ConfigError("unknown meta mode '" + std::string(s) + "'");
}

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

void MetaHyper::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("meta: alpha must be positive");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("meta: beta must be positive");
  if (tasks_per_iter == 0) throw ConfigError("meta: tasks_per_iter must be at least 1");
  if (inner_steps < 1) throw ConfigError("meta: inner_steps must be at least 1");
  if (clip_norm < 0.0) throw ConfigError("meta: clip_norm must be non-negative");
  if (batch_size == 0 || val_batch_size == 0) throw ConfigError("meta: batch sizes must be positive");
  if (val_split == Split::Test) throw ConfigError("meta: the test split cannot supply D_val");
}

TrainState TrainState::fresh(Params params, std::mt19937_64 rng) {
  TrainState s;
  s.adam = AdamState::for_params(params);
  s.params = std::move(params);
  s.rng = rng;
  return s;
}

bool operator==(const TrainState& a, const TrainState& b) {
  auto same_double = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
  return a.params == b.params && a.iteration == b.iteration && same_double(a.best_val, b.best_val) &&
         a.patience_used == b.patience_used && a.adam.step == b.adam.step && a.adam.m == b.adam.m &&
         a.adam.v == b.adam.v && a.rng == b.rng;
}

namespace {

using nlohmann::json;

// Writes via a temporary name so a crash never leaves a half-written file.
template <typename Fn>
void write_atomic(const std::filesystem::path& path, Fn&& write) {
  auto tmp = path;
  tmp += ".tmp";
  write(tmp);
  std::filesystem::rename(tmp, path);
}

}  // namespace

void TrainState::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_atomic(dir / "params.ckpt", [&](const auto& p) { save_checkpoint(p, params); });
  write_atomic(dir / "adam_m.ckpt", [&](const auto& p) { save_checkpoint(p, adam.m); });
  write_atomic(dir / "adam_v.ckpt", [&](const auto& p) { save_checkpoint(p, adam.v); });
  std::ostringstream rng_text;
  rng_text << rng;
  json j = {{"iteration", iteration},
            {"best_val", std::isfinite(best_val) ? json(best_val) : json(nullptr)},
            {"patience_used", patience_used},
            {"params_version", params.version()},
            {"adam", {{"step", adam.step}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
            {"rng", rng_text.str()}};
  write_atomic(dir / "state.json", [&](const auto& p) {
    std::ofstream out(p, std::ios::trunc);
    out << j.dump(2) << "\n";
    if (!out) throw Error("train state: cannot write " + p.string());
  });
}

TrainState TrainState::load(const std::filesystem::path& dir) {
  TrainState s;
  s.params = load_checkpoint(dir / "params.ckpt");
  s.adam.m = load_checkpoint(dir / "adam_m.ckpt");
  s.adam.v = load_checkpoint(dir / "adam_v.ckpt");
  std::ifstream in(dir / "state.json");
  if (!in) throw CorruptionError("train state: missing " + (dir / "state.json").string());
  try {
    json j = json::parse(in);
    s.iteration = j.at("iteration");
    s.best_val = j.at("best_val").is_null() ? std::numeric_limits<double>::infinity()
                                            : j.at("best_val").get<double>();
    s.patience_used = j.at("patience_used");
    s.params.set_version(j.at("params_version"));
    const json& a = j.at("adam");
    s.adam.step = a.at("step");
    s.adam.beta1 = a.at("beta1");
    s.adam.beta2 = a.at("beta2");
    s.adam.eps = a.at("eps");
    std::istringstream rng_text(j.at("rng").get<std::string>());
    rng_text >> s.rng;
    if (!rng_text) throw CorruptionError("train state: bad rng state");
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("train state: malformed state.json: ") + e.what());
  }
  if (!s.params.compatible(s.adam.m) || !s.params.compatible(s.adam.v)) {
    throw CorruptionError("train state: optimizer moments do not match parameters");
  }
  return s;
}

Params inner_adapt(const Params& params, const Objective& obj, const SeqBatch& batch, double alpha,
                   int inner_steps, int task) {
  if (!(alpha > 0.0)) throw ContractError("inner_adapt: alpha must be positive");
  if (inner_steps < 1) throw ContractError("inner_adapt: inner_steps must be at least 1");
  Params theta = params;
  for (int k = 0; k < inner_steps; ++k) {
    try {
      auto [loss, grad] = loss_and_grad(obj, theta, batch);
      if (!std::isfinite(loss)) throw NumericError("non-finite loss");
      theta = sgd_step(theta, grad, alpha);
    } catch (const NumericError& e) {
      throw NumericError("inner adaptation on task " + std::to_string(task) + ": " + e.what());
    }
  }
  return theta;
}

MetaGradient meta_gradient(const Params& params, const Objective& obj,
                           std::span<const SeqBatch> train_batches, const SeqBatch& val_batch,
                           double alpha, MetaMode mode, int inner_steps) {
  if (alpha < 0.0 || !std::isfinite(alpha)) throw ContractError("meta_gradient: alpha must be >= 0");
  if (inner_steps < 1) throw ContractError("meta_gradient: inner_steps must be at least 1");
  if (train_batches.empty()) throw ContractError("meta_gradient: no training batches");
  require_trainable(val_batch);

  MetaGradient out;
  out.grad = zeros_like(params);
  for (const SeqBatch& batch : train_batches) {
    require_trainable(batch);
    TaskDiagnostics diag;
    diag.task = batch.task;
    // Inner trajectory θ_0 .. θ_K.
    std::vector<Params> path{params};
    try {
      for (int k = 0; k < inner_steps; ++k) {
        auto [loss, grad] = loss_and_grad(obj, path.back(), batch);
        if (!std::isfinite(loss)) throw NumericError("non-finite loss");
        if (k == 0) diag.train_loss = loss;
        path.push_back(alpha == 0.0 ? path.back() : sgd_step(path.back(), grad, alpha));
      }
    } catch (const NumericError& e) {
      throw NumericError("inner adaptation on task " + std::to_string(batch.task) + ": " + e.what());
    }
    auto [val_loss, v] = loss_and_grad(obj, path.back(), val_batch);
    if (!std::isfinite(val_loss)) {
      throw NumericError("validation loss after adapting on task " + std::to_string(batch.task));
    }
    diag.val_loss = val_loss;
    if (mode == MetaMode::SecondOrder && alpha != 0.0) {
      for (int k = inner_steps - 1; k >= 0; --k) {
        GradMap hv = hessian_vector_product(obj, path[static_cast<std::size_t>(k)], batch, v);
        v = add_scaled(v, hv, -alpha);
      }
    }
    diag.grad_norm = global_norm(v);
    out.grad = add_scaled(out.grad, v, 1.0);
    out.tasks.push_back(diag);
  }
  return out;
}

UpdateInfo apply_update(TrainState& state, GradMap grad, const OptimizerConfig& opt) {
  require_compatible(state.params, grad, "update");
  UpdateInfo info;
  info.grad_norm = global_norm(grad);
  if (!std::isfinite(info.grad_norm)) throw NumericError("update: non-finite gradient");
  if (opt.clip_norm > 0.0 && info.grad_norm > opt.clip_norm) {
    grad = scaled(grad, opt.clip_norm / info.grad_norm);
    info.clipped = true;
  }
  if (opt.kind == OptimizerKind::Adam) {
    if (state.adam.m.empty()) state.adam = AdamState::for_params(state.params);
    auto [p, a] = adam_step(state.adam, state.params, grad, opt.lr);
    state.params = std::move(p);
    state.adam = std::move(a);
  } else {
    state.params = sgd_step(state.params, grad, opt.lr);
  }
  return info;
}

MetaStepResult meta_step(TrainState& state, const TaskSet& tasks, const MetaHyper& hyper,
                         const Objective& obj) {
  hyper.validate();
  const int target = tasks.target_task();
  if (target < 0) throw SetupError("meta_step: no target task");
  if (tasks.task(static_cast<std::size_t>(target)).split(hyper.val_split).empty()) {
    throw SetupError("meta_step: target task has an empty validation pool");
  }
  bool any_source = false;
  for (const Task& t : tasks.tasks()) any_source |= t.role == Role::Source && hyper.train_tasks.matches(t);
  if (!any_source) throw SetupError("meta_step: no source task in the training roster");

  std::vector<SeqBatch> train;
  train.reserve(hyper.tasks_per_iter);
  for (std::size_t i = 0; i < hyper.tasks_per_iter; ++i) {
    train.push_back(sample_batch(tasks, hyper.train_tasks, Split::Train, hyper.batch_size, state.rng).second);
  }
  TaskFilter target_only;
  target_only.role = Role::Target;
  SeqBatch val = sample_batch(tasks, target_only, hyper.val_split, hyper.val_batch_size, state.rng).second;
  // D_val is drawn from held-out data but feeds a gradient, so mark it trainable.
  val.split = Split::Train;

  MetaGradient mg = meta_gradient(state.params, obj, train, val, hyper.alpha, hyper.mode, hyper.inner_steps);
  MetaStepResult r;
  r.update = apply_update(state, std::move(mg.grad), hyper.outer_optimizer());
  r.tasks = std::move(mg.tasks);
  ++state.iteration;
  return r;
}

double joint_update(TrainState& state, const SeqBatch& batch, const OptimizerConfig& opt,
                    const Objective& obj) {
  require_trainable(batch);
  auto [loss, grad] = loss_and_grad(obj, state.params, batch);
  if (!std::isfinite(loss)) throw NumericError("joint step: non-finite loss on task " + std::to_string(batch.task));
  apply_update(state, std::move(grad), opt);
  return loss;
}

double joint_step(TrainState& state, const TaskSet& tasks, const TaskFilter& include,
                  const OptimizerConfig& opt, std::size_t batch_size, const Objective& obj) {
  SeqBatch batch = sample_batch(tasks, include, Split::Train, batch_size, state.rng).second;
  const double loss = joint_update(state, batch, opt, obj);
  ++state.iteration;
  return loss;
}

ScheduleResult run_plateau_schedule(const Params& start,
                                    const std::function<Params(const Params&, double)>& epoch,
                                    const std::function<double(const Params&)>& evaluate,
                                    const PlateauSchedule& schedule) {
  if (!(schedule.lr > 0.0)) throw ContractError("schedule: lr must be positive");
  if (schedule.stop_after < 1) throw ContractError("schedule: stop_after must be at least 1");
  if (!(schedule.decay > 0.0) || schedule.decay > 1.0) throw ContractError("schedule: decay must lie in (0, 1]");

  ScheduleResult r;
  r.best = start;
  r.initial_val = evaluate(start);
  r.best_val = r.initial_val;
  Params current = start;
  double lr = schedule.lr;
  int streak = 0;
  for (int e = 1; e <= schedule.max_epochs; ++e) {
    current = epoch(current, lr);
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = lr;
    rec.val_loss = evaluate(current);
    rec.improved = rec.val_loss < r.best_val;
    r.history.push_back(rec);
    if (rec.improved) {
      r.best_val = rec.val_loss;
      r.best = current;
      streak = 0;
    } else {
      lr *= schedule.decay;
      if (++streak >= schedule.stop_after) break;
    }
  }
  return r;
}

double split_loss(const Params& params, const Objective& obj, const TaskSet& tasks,
                  std::size_t task, Split split, std::size_t batch_size, std::size_t limit) {
  double total = 0.0;
  double weight = 0.0;
  for (const SeqBatch& b : split_batches(tasks, task, split, batch_size, limit)) {
    const double w = static_cast<double>(b.predicted_tokens());
    total += w * loss_value(obj, params, b);
    weight += w;
  }
  if (weight == 0.0) throw SetupError("split_loss: empty split");
  return total / weight;
}

namespace {

FineTuneResult tune_on_target(TrainState state, const TaskSet& tasks, std::size_t target,
                              std::size_t batch_size, const Objective& obj,
                              const PlateauSchedule& schedule) {
  const Task& t = tasks.task(target);
  if (t.train.size() < batch_size || t.val.empty()) {
    throw SetupError("fine-tune: task '" + t.name + "' lacks train or validation data");
  }
  std::mt19937_64& rng = state.rng;
  auto epoch = [&](const Params& start, double lr) {
    std::vector<std::size_t> order(t.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Params p = start;
    std::vector<Utterance> chunk;
    for (std::size_t i = 0; i + batch_size <= order.size(); i += batch_size) {
      chunk.clear();
      for (std::size_t j = i; j < i + batch_size; ++j) chunk.push_back(t.train[order[j]]);
      SeqBatch b = batch_of(chunk, Split::Train, static_cast<int>(target));
      auto [loss, grad] = loss_and_grad(obj, p, b);
      if (!std::isfinite(loss)) throw NumericError("fine-tune: non-finite loss");
      p = sgd_step(p, grad, lr);
    }
    return p;
  };
  auto evaluate = [&](const Params& p) { return split_loss(p, obj, tasks, target, Split::Val, batch_size); };

  FineTuneResult r;
  r.schedule = run_plateau_schedule(state.params, epoch, evaluate, schedule);
  state.params = r.schedule.best;
  state.best_val = r.schedule.best_val;
  state.iteration += static_cast<std::int64_t>(r.schedule.history.size());
  r.state = std::move(state);
  return r;
}

}  // namespace

FineTuneResult fine_tune(TrainState state, const TaskSet& tasks, std::size_t target, double lr,
                         int patience, int max_epochs, std::size_t batch_size, const Objective& obj) {
  if (patience < 0) throw ContractError("fine_tune: patience must be non-negative");
  PlateauSchedule s;
  s.lr = lr;
  s.decay = 1.0;
  s.stop_after = patience + 1;
  s.max_epochs = max_epochs;
  return tune_on_target(std::move(state), tasks, target, batch_size, obj, s);
}

FineTuneResult lm_fine_tune_schedule(TrainState state, const TaskSet& tasks, std::size_t target,
                                     std::size_t batch_size, const Objective& obj, int max_epochs) {
  PlateauSchedule s;
  s.lr = 1.0;
  s.decay = 0.25;
  s.stop_after = 5;
  s.max_epochs = max_epochs;
  return tune_on_target(std::move(state), tasks, target, batch_size, obj, s);
}

}  // namespace mtl
