#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <vector>

#include "ocn/model.hpp"
#include "ocn/synth.hpp"
#include "ocn/train.hpp"

using namespace ocn;
using Catch::Approx;

namespace {

SynthConfig data_config() {
  SynthConfig cfg;
  cfg.n_verbs = 5;
  cfg.n_objects = 2;
  cfg.n_queries = 5;
  cfg.d = 16;
  cfg.d_p = 8;
  cfg.images = 40;
  cfg.seed = 5;
  cfg.sample_seed = 6;
  return cfg;
}

ModelConfig model_config(const SynthConfig& data) {
  ModelConfig cfg;
  cfg.n_verbs = data.n_verbs;
  cfg.n_objects = data.n_objects;
  cfg.n_queries = data.n_queries;
  cfg.d = data.d;
  cfg.d_p = data.d_p;
  cfg.heads = 2;
  return cfg;
}

std::vector<Matrix> snapshot(ModelParams& p) {
  std::vector<Matrix> out;
  p.visit([&](const std::string&, Matrix& m) { out.push_back(m); });
  return out;
}

bool identical(std::vector<Matrix> a, std::vector<Matrix> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) return false;
    for (std::size_t k = 0; k < a[i].size(); ++k)
      if (a[i].at(k) != b[i].at(k)) return false;
  }
  return true;
}

double mean_total(const std::vector<StepStats>& h, std::size_t from, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = from; i < from + n; ++i) s += h[i].total;
  return s / static_cast<double>(n);
}

}  // namespace

TEST_CASE("training reduces the objective on a small planted dataset") {
  const SynthConfig data = data_config();
  const SynthDataset ds = gen_dataset(data);
  const ModelConfig cfg = model_config(data);
  Rng init(1);
  ModelParams params = init_model(cfg, init);
  const PriorTables priors = build_priors(ds.anns, ds.vocab, cfg.beta, 3);

  TrainConfig tc;
  tc.steps = 60;
  tc.batch = 4;
  tc.lr = 5e-3;
  tc.seed = 9;
  tc.log_every = 0;
  const auto history = train(params, cfg, ds.features, ds.anns, ds.embeddings, priors, tc);
  REQUIRE(history.size() == tc.steps);
  for (const StepStats& st : history) {
    REQUIRE(std::isfinite(st.total));
    REQUIRE(std::isfinite(st.skl));
    REQUIRE(st.total > 0.0);
  }
  REQUIRE(mean_total(history, tc.steps - 5, 5) < mean_total(history, 0, 5));
  // The SKL monitor also has to move: embeddings start far from the prior.
  REQUIRE(history.back().skl < history.front().skl);
}

TEST_CASE("training is a deterministic function of its seeds") {
  const SynthConfig data = data_config();
  const SynthDataset ds = gen_dataset(data);
  const ModelConfig cfg = model_config(data);
  const PriorTables priors = build_priors(ds.anns, ds.vocab, cfg.beta, 3);
  TrainConfig tc;
  tc.steps = 8;
  tc.batch = 3;
  tc.seed = 4;
  tc.log_every = 0;

  Rng init_a(2);
  ModelParams a = init_model(cfg, init_a);
  Rng init_b(2);
  ModelParams b = init_model(cfg, init_b);
  REQUIRE(identical(snapshot(a), snapshot(b)));

  const auto ha = train(a, cfg, ds.features, ds.anns, ds.embeddings, priors, tc);
  const auto hb = train(b, cfg, ds.features, ds.anns, ds.embeddings, priors, tc);
  REQUIRE(identical(snapshot(a), snapshot(b)));
  for (std::size_t i = 0; i < ha.size(); ++i) {
    REQUIRE(ha[i].total == hb[i].total);
    REQUIRE(ha[i].skl == hb[i].skl);
  }

  Rng init_c(2);
  ModelParams c = init_model(cfg, init_c);
  TrainConfig other = tc;
  other.seed = 5;
  train(c, cfg, ds.features, ds.anns, ds.embeddings, priors, other);
  REQUIRE_FALSE(identical(snapshot(a), snapshot(c)));
}

TEST_CASE("zero loss weights leave every parameter untouched") {
  const SynthConfig data = data_config();
  const SynthDataset ds = gen_dataset(data);
  ModelConfig cfg = model_config(data);
  cfg.weights.skl = cfg.weights.box = cfg.weights.giou = 0.0;
  cfg.weights.obj = cfg.weights.verb = 0.0;
  Rng init(3);
  ModelParams params = init_model(cfg, init);
  const std::vector<Matrix> before = snapshot(params);
  const PriorTables priors = build_priors(ds.anns, ds.vocab, cfg.beta, 3);
  TrainConfig tc;
  tc.steps = 3;
  tc.batch = 2;
  tc.log_every = 0;
  const auto history = train(params, cfg, ds.features, ds.anns, ds.embeddings, priors, tc);
  REQUIRE(history.back().total == 0.0);
  REQUIRE(identical(before, snapshot(params)));
}

TEST_CASE("ablated variants train and leave disabled branches frozen") {
  const SynthConfig data = data_config();
  const SynthDataset ds = gen_dataset(data);
  const PriorTables priors = build_priors(ds.anns, ds.vocab, 0.1, 3);
  TrainConfig tc;
  tc.steps = 4;
  tc.batch = 2;
  tc.log_every = 0;

  auto run = [&](ModelConfig cfg) {
    Rng init(7);
    ModelParams params = init_model(cfg, init);
    const auto history = train(params, cfg, ds.features, ds.anns, ds.embeddings, priors, tc);
    for (const StepStats& st : history) REQUIRE(std::isfinite(st.total));
    return std::make_pair(std::move(params), history.back().total);
  };

  const ModelConfig full = model_config(data);
  const double full_total = run(full).second;

  ModelConfig no_vsm = full;
  no_vsm.use_vsm = false;
  auto [nv_params, nv_total] = run(no_vsm);
  REQUIRE(nv_total != full_total);
  // Without the semantic branch its weights never receive gradient.
  Rng init(7);
  ModelParams fresh = init_model(no_vsm, init);
  for (std::size_t k = 0; k < fresh.vsm.theta.size(); ++k)
    REQUIRE(nv_params.vsm.theta.at(k) == fresh.vsm.theta.at(k));
  for (std::size_t k = 0; k < fresh.fusion.w_x.size(); ++k)
    REQUIRE(nv_params.fusion.w_x.at(k) == fresh.fusion.w_x.at(k));
  bool obj_moved = false;
  for (std::size_t k = 0; k < fresh.obj_w.size(); ++k)
    if (nv_params.obj_w.at(k) != fresh.obj_w.at(k)) obj_moved = true;
  REQUIRE(obj_moved);

  ModelConfig no_skl = full;
  no_skl.use_skl = false;
  REQUIRE(run(no_skl).second != full_total);

  ModelConfig no_interc = full;
  no_interc.use_interc = false;
  REQUIRE(run(no_interc).second != full_total);

  ModelConfig no_intraec = full;
  no_intraec.use_intraec = false;
  REQUIRE(run(no_intraec).second != full_total);
}

TEST_CASE("optimizer honors learning-rate changes between steps") {
  SgdMomentum opt(1.0, 0.0);
  Matrix w(1, 1, 0.0);
  // Gradient of sum(w) is 1, so each apply subtracts exactly the lr.
  auto step_once = [&](double lr) {
    opt.set_lr(lr);
    Tape t;
    Binder b(t);
    Var v = b(w);
    t.backward(sum_all(v));
    opt.apply(b.bound);
  };
  step_once(1.0);
  REQUIRE(w(0, 0) == Approx(-1.0));
  step_once(0.1);
  REQUIRE(w(0, 0) == Approx(-1.1));
}

TEST_CASE("training validates its inputs") {
  const SynthConfig data = data_config();
  const SynthDataset ds = gen_dataset(data);
  const ModelConfig cfg = model_config(data);
  Rng init(1);
  ModelParams params = init_model(cfg, init);
  const PriorTables priors = build_priors(ds.anns, ds.vocab, cfg.beta, 3);
  TrainConfig tc;
  tc.steps = 1;
  tc.log_every = 0;

  std::vector<Matrix> short_features(ds.features.begin(), ds.features.end() - 1);
  REQUIRE_THROWS_AS(train(params, cfg, short_features, ds.anns, ds.embeddings, priors, tc),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(
      train(params, cfg, ds.features, ds.anns, Matrix(2, data.d_p, 0.5), priors, tc),
      std::invalid_argument);
  TrainConfig zero_steps = tc;
  zero_steps.steps = 0;
  REQUIRE_THROWS_AS(
      train(params, cfg, ds.features, ds.anns, ds.embeddings, priors, zero_steps),
      std::invalid_argument);
}

TEST_CASE("checkpoints round-trip parameters and configuration exactly") {
  const std::string dir = "train_tmp_ckpt";
  std::filesystem::create_directories(dir);
  const SynthConfig data = data_config();
  ModelConfig cfg = model_config(data);
  cfg.tau = 0.07;
  cfg.beta = 0.2;
  cfg.use_intraec = false;
  Rng init(11);
  ModelParams params = init_model(cfg, init);
  save_checkpoint(dir + "/model.ckpt", params, cfg);
  auto [back, back_cfg] = load_checkpoint(dir + "/model.ckpt");
  REQUIRE(back_cfg.n_verbs == cfg.n_verbs);
  REQUIRE(back_cfg.n_objects == cfg.n_objects);
  REQUIRE(back_cfg.d == cfg.d);
  REQUIRE(back_cfg.d_p == cfg.d_p);
  REQUIRE(back_cfg.heads == cfg.heads);
  REQUIRE(back_cfg.tau == cfg.tau);
  REQUIRE(back_cfg.beta == cfg.beta);
  REQUIRE(back_cfg.use_vsm == cfg.use_vsm);
  REQUIRE(back_cfg.use_skl == cfg.use_skl);
  REQUIRE(back_cfg.use_interc == cfg.use_interc);
  REQUIRE(back_cfg.use_intraec == cfg.use_intraec);
  REQUIRE(identical(snapshot(params), snapshot(back)));
  REQUIRE_THROWS_AS(load_checkpoint(dir + "/missing.ckpt"), std::runtime_error);
  std::filesystem::remove_all(dir);
}
