#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ocn/ocn.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_extract_priors(const std::string& annotations, const std::string& vocab_path,
                       const std::string& out, double beta, std::size_t rare_threshold) {
  const ocn::Vocabulary vocab = ocn::load_vocabulary(vocab_path);
  const ocn::AnnotationSet anns = ocn::load_annotations(annotations, vocab);
  const ocn::PriorTables priors = ocn::build_priors(anns, vocab, beta, rare_threshold);
  fs::create_directories(out);
  ocn::save_priors(out, priors);
  std::size_t rare = 0;
  for (std::size_t k = 0; k < priors.rare.size(); ++k) rare += priors.rare.at(k) != 0.0;
  std::cout << "images " << anns.images.size() << "\ntriplets " << anns.n_triplets()
            << "\nverbs " << vocab.n_verbs() << "\nobjects " << vocab.n_objects()
            << "\nrare interactions " << rare << "\nwrote " << out << "\n";
  return 0;
}

int cmd_gradcheck(std::size_t seeds, double tol, const std::string& filter) {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  for (const ocn::GradCase& c : ocn::gradient_suite()) {
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    double worst = 0.0;
    std::size_t worst_seed = 0;
    for (std::size_t s = 0; s < seeds; ++s) {
      const ocn::GradCheckResult r = c.run(s);
      if (r.max_rel_err > worst) {
        worst = r.max_rel_err;
        worst_seed = s;
      }
    }
    const bool pass = worst < tol;
    ok = ok && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << c.name << "  max rel err " << worst << " (seed "
              << worst_seed << ")\n";
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << (ok ? "all gradients match" : "gradient mismatch") << " (" << secs << "s, "
            << seeds << " seeds, tol " << tol << ")\n";
  return ok ? 0 : 1;
}

int cmd_gen_synth(const std::string& out, ocn::SynthConfig cfg, std::size_t test_images) {
  ocn::SynthConfig train_cfg = cfg;
  train_cfg.sample_seed = cfg.seed * 2 + 1;
  ocn::SynthConfig test_cfg = cfg;
  test_cfg.images = test_images;
  test_cfg.sample_seed = cfg.seed * 2 + 2;

  const ocn::SynthDataset train = ocn::gen_dataset(train_cfg);
  const ocn::SynthDataset test = ocn::gen_dataset(test_cfg);
  fs::create_directories(out + "/train");
  fs::create_directories(out + "/test");
  ocn::save_dataset(out + "/train", train, train_cfg);
  ocn::save_dataset(out + "/test", test, test_cfg);
  std::cout << "train images " << train.anns.images.size() << " triplets "
            << train.anns.n_triplets() << "\ntest images " << test.anns.images.size()
            << " triplets " << test.anns.n_triplets() << "\nwrote " << out << "\n";
  return 0;
}

struct TrainToyArgs {
  std::string data, out;
  ocn::TrainConfig tc;
  double tau = 0.05, beta = 0.1, gamma = 2.0, alpha = 0.25;
  std::size_t heads = 2, rare_threshold = 10, dump_k = 300, init_seed = 0;
  bool no_vsm = false, no_skl = false, no_interc = false, no_intraec = false;
  std::string verb_loss = "focal";
  ocn::LossWeights lw;
};

int cmd_train_toy(const TrainToyArgs& a) {
  const ocn::LoadedDataset train_ds = ocn::load_dataset(a.data + "/train");
  const ocn::LoadedDataset test_ds = ocn::load_dataset(a.data + "/test");

  const ocn::PriorTables priors =
      ocn::build_priors(train_ds.anns, train_ds.vocab, a.beta, a.rare_threshold);

  ocn::ModelConfig cfg;
  cfg.n_verbs = train_ds.vocab.n_verbs();
  cfg.n_objects = train_ds.vocab.n_objects();
  cfg.n_queries = train_ds.n_queries;
  cfg.d = train_ds.d;
  cfg.d_p = train_ds.d_p;
  cfg.heads = a.heads;
  cfg.tau = a.tau;
  cfg.beta = a.beta;
  cfg.use_vsm = !a.no_vsm;
  cfg.use_skl = !a.no_skl;
  cfg.use_interc = !a.no_interc;
  cfg.use_intraec = !a.no_intraec;
  cfg.weights = a.lw;
  cfg.verb_loss.focal = a.verb_loss == "focal";
  cfg.verb_loss.gamma = a.gamma;
  cfg.verb_loss.alpha = a.alpha;

  ocn::Rng init_rng(a.init_seed);
  ocn::ModelParams params = ocn::init_model(cfg, init_rng);
  const std::vector<ocn::StepStats> history =
      ocn::train(params, cfg, train_ds.features, train_ds.anns, train_ds.embeddings, priors,
                 a.tc, &std::cout);

  fs::create_directories(a.out);
  fs::create_directories(a.out + "/priors");
  ocn::save_checkpoint(a.out + "/model.ckpt", params, cfg);
  ocn::save_priors(a.out + "/priors", priors);
  {
    std::ofstream log(a.out + "/train_log.txt");
    log << "step total skl box giou obj verb\n";
    log.precision(10);
    for (const ocn::StepStats& s : history)
      log << s.step << " " << s.total << " " << s.skl << " " << s.box << " " << s.giou << " "
          << s.obj << " " << s.verb << "\n";
  }

  std::vector<std::string> test_ids;
  for (const auto& img : test_ds.anns.images) test_ids.push_back(img.image_id);
  const std::vector<ocn::DumpRecord> records = ocn::predict_dataset(
      params, cfg, test_ds.features, test_ids, train_ds.embeddings, priors.s_hat, a.dump_k);
  ocn::write_predictions(a.out + "/predictions.txt", records, train_ds.vocab);
  std::cout << "final total " << history.back().total << "\nwrote " << a.out
            << " (checkpoint, priors, train_log.txt, predictions.txt)\n";
  return 0;
}

int cmd_evaluate(const std::string& predictions, const std::string& annotations,
                 const std::string& vocab_path, const std::string& priors_dir, bool mask,
                 std::size_t k, double iou, const std::string& out) {
  const ocn::Vocabulary vocab = ocn::load_vocabulary(vocab_path);
  const ocn::AnnotationSet gts = ocn::load_annotations(annotations, vocab);
  const ocn::PriorTables priors = ocn::load_priors(priors_dir);
  std::vector<ocn::DumpRecord> records = ocn::read_predictions(predictions, vocab);
  if (mask) records = ocn::filter_masked(records, priors.mask);

  ocn::EvalConfig cfg;
  cfg.k = k;
  cfg.iou_thresh = iou;
  const ocn::EvalReport report =
      ocn::evaluate_predictions(records, gts, vocab, priors.rare, cfg, &priors.s, &std::cerr);
  ocn::print_report(std::cout, report, vocab);
  if (!out.empty()) ocn::report_kv(report).save(out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"object-guided cross-modal calibration toolkit"};
  app.require_subcommand(1);

  // extract-priors
  std::string ep_annotations, ep_vocab, ep_out;
  double ep_beta = 0.1;
  std::size_t ep_rare = 10;
  CLI::App* ep = app.add_subcommand("extract-priors",
                                    "build verb/object statistics from annotations");
  ep->add_option("--annotations", ep_annotations)->required();
  ep->add_option("--vocab", ep_vocab)->required();
  ep->add_option("--out", ep_out)->required();
  ep->add_option("--beta", ep_beta);
  ep->add_option("--rare-threshold", ep_rare);

  // gradcheck
  std::size_t gc_seeds = 5;
  double gc_tol = 1e-4;
  std::string gc_filter;
  CLI::App* gc = app.add_subcommand("gradcheck",
                                    "compare tape gradients against central differences");
  gc->add_option("--seeds", gc_seeds);
  gc->add_option("--tol", gc_tol);
  gc->add_option("--filter", gc_filter, "only run cases whose name contains this");

  // gen-synth
  std::string gs_out;
  ocn::SynthConfig gs_cfg;
  std::size_t gs_test_images = 100;
  CLI::App* gs = app.add_subcommand("gen-synth", "write a synthetic train/test dataset");
  gs->add_option("--out", gs_out)->required();
  gs->add_option("--verbs", gs_cfg.n_verbs);
  gs->add_option("--objects", gs_cfg.n_objects);
  gs->add_option("--queries", gs_cfg.n_queries);
  gs->add_option("--d", gs_cfg.d);
  gs->add_option("--d-p", gs_cfg.d_p);
  gs->add_option("--train-images", gs_cfg.images);
  gs->add_option("--test-images", gs_test_images);
  gs->add_option("--noise", gs_cfg.noise);
  gs->add_option("--verb-gain", gs_cfg.verb_gain);
  gs->add_option("--box-gain", gs_cfg.box_gain);
  gs->add_option("--seed", gs_cfg.seed);
  gs->add_option("--p-co", gs_cfg.p_co);
  gs->add_option("--object-skew", gs_cfg.object_skew);
  gs->add_option("--min-triplets", gs_cfg.min_triplets);
  gs->add_option("--max-triplets", gs_cfg.max_triplets);

  // train-toy
  TrainToyArgs tt;
  CLI::App* tr = app.add_subcommand("train-toy", "train on a generated dataset and dump "
                                                 "test-split predictions");
  tr->add_option("--data", tt.data)->required();
  tr->add_option("--out", tt.out)->required();
  tr->add_option("--steps", tt.tc.steps);
  tr->add_option("--batch", tt.tc.batch);
  tr->add_option("--lr", tt.tc.lr);
  tr->add_option("--momentum", tt.tc.momentum);
  tr->add_option("--seed", tt.tc.seed);
  tr->add_option("--init-seed", tt.init_seed);
  tr->add_option("--log-every", tt.tc.log_every);
  tr->add_option("--tau", tt.tau);
  tr->add_option("--beta", tt.beta);
  tr->add_option("--heads", tt.heads);
  tr->add_option("--rare-threshold", tt.rare_threshold);
  tr->add_option("--dump-k", tt.dump_k);
  tr->add_flag("--no-vsm", tt.no_vsm);
  tr->add_flag("--no-skl", tt.no_skl);
  tr->add_flag("--no-interc", tt.no_interc);
  tr->add_flag("--no-intraec", tt.no_intraec);
  tr->add_option("--verb-loss", tt.verb_loss)->check(CLI::IsMember({"focal", "bce"}));
  tr->add_option("--gamma", tt.gamma);
  tr->add_option("--alpha", tt.alpha);
  tr->add_option("--lambda-skl", tt.lw.skl);
  tr->add_option("--lambda-box", tt.lw.box);
  tr->add_option("--lambda-giou", tt.lw.giou);
  tr->add_option("--lambda-obj", tt.lw.obj);
  tr->add_option("--lambda-verb", tt.lw.verb);

  // evaluate
  std::string ev_pred, ev_annotations, ev_vocab, ev_priors, ev_out;
  bool ev_mask = false;
  std::size_t ev_k = 100;
  double ev_iou = 0.5;
  CLI::App* ev = app.add_subcommand("evaluate", "score a prediction dump against annotations");
  ev->add_option("--predictions", ev_pred)->required();
  ev->add_option("--annotations", ev_annotations)->required();
  ev->add_option("--vocab", ev_vocab)->required();
  ev->add_option("--priors", ev_priors)->required();
  ev->add_flag("--mask", ev_mask, "zero out verb scores the priors mark impossible");
  ev->add_option("--k", ev_k);
  ev->add_option("--iou", ev_iou);
  ev->add_option("--out", ev_out, "also write the report as key=value");

  CLI11_PARSE(app, argc, argv);
  try {
    if (ep->parsed()) return cmd_extract_priors(ep_annotations, ep_vocab, ep_out, ep_beta, ep_rare);
    if (gc->parsed()) return cmd_gradcheck(gc_seeds, gc_tol, gc_filter);
    if (gs->parsed()) return cmd_gen_synth(gs_out, gs_cfg, gs_test_images);
    if (tr->parsed()) return cmd_train_toy(tt);
    if (ev->parsed())
      return cmd_evaluate(ev_pred, ev_annotations, ev_vocab, ev_priors, ev_mask, ev_k, ev_iou,
                          ev_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
