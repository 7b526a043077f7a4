// foa: command-line front end for the feature-alignment attack.
//
//   foa attack   --nat a.ppm --tar b.ppm --encoders e1.foae,e2.foae --out adv.ppm
//   foa eval     --adv-dir adv --tar-dir tar --heldout-encoder h.foae --threshold 0.5
//   foa oracle   --suite all --trials 20 --seed 0
//   foa toy-world / init-encoder / sample-image   (toy data)
//
// Exit status: 0 ok, 2 bad input, 3 numerical failure; oracle exits 1 on a
// failed property.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "foa/foa.hpp"
#include "foa/oracles.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOracleFailed = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitNumerical = 3;

struct AttackArgs {
  std::string nat, tar, out, batch;
  std::vector<std::string> encoders;
  std::vector<std::size_t> clusters{3, 5};
  foa::AttackConfig cfg;
  bool static_weights = false;
  bool no_global = false;
  std::size_t threads = 0;
};

struct AttackOutputs {
  fs::path image, delta, metrics;
};

AttackOutputs output_paths(const fs::path& out) {
  const fs::path dir = out.parent_path();
  const std::string stem = out.stem().string();
  fs::path metrics_dir = dir;
  if (const char* env = std::getenv("FOA_LOG_DIR"); env != nullptr && *env != '\0') metrics_dir = env;
  return {out, dir / (stem + ".delta.foat"), metrics_dir / (stem + ".metrics.csv")};
}

foa::AttackResult attack_one(const fs::path& nat_path, const fs::path& tar_path,
                             const std::vector<foa::EncoderSpec>& encs, const foa::AttackConfig& cfg,
                             const fs::path& out) {
  const foa::Image nat = foa::io::read_ppm(nat_path);
  const foa::Image tar = foa::io::read_ppm(tar_path);
  foa::require(nat.same_shape(tar), foa::ErrorCode::ShapeMismatch,
               "natural and target images differ in size: " + nat_path.string() + ", " + tar_path.string());
  foa::AttackResult res = foa::run_progressive(nat, tar, encs, cfg);
  const AttackOutputs paths = output_paths(out);
  foa::io::write_ppm(paths.image, res.adv_image);
  foa::io::write_tensor(paths.delta, foa::io::image_tensor(res.delta));
  foa::io::write_text(paths.metrics,
                      foa::io::format_metrics_csv(foa::io::metrics_rows(res.loss_trace, encs)));
  return res;
}

void print_summary(const std::string& label, const foa::AttackResult& r) {
  std::printf("%s: stages %zu clusters %zu mean_final_total %.6f linf %.6f surrogates %s\n",
              label.c_str(), r.stages_run, r.clusters_used, r.mean_final_total(),
              foa::max_abs(r.delta.flat()), r.succeeded_on_surrogates ? "ok" : "above-threshold");
}

int run_attack_cmd(AttackArgs a) {
  a.cfg.cluster_schedule = a.clusters;
  a.cfg.dynamic_weighting = !a.static_weights;
  a.cfg.global_alignment = !a.no_global;
  foa::validate(a.cfg);

  std::vector<foa::EncoderSpec> encs;
  for (const auto& p : a.encoders) encs.push_back(foa::io::read_encoder(p));

  if (a.batch.empty()) {
    foa::require(!a.nat.empty(), foa::ErrorCode::InvalidConfig, "--nat is required without --batch");
    foa::require(!a.tar.empty(), foa::ErrorCode::InvalidConfig, "--tar is required without --batch");
    print_summary(fs::path(a.out).filename().string(), attack_one(a.nat, a.tar, encs, a.cfg, a.out));
    return kExitOk;
  }

  // Batch: <batch>/nat/*.ppm paired by name with <batch>/tar/, image i seeded seed + i.
  const fs::path nat_dir = fs::path(a.batch) / "nat";
  const fs::path tar_dir = fs::path(a.batch) / "tar";
  foa::require(fs::is_directory(nat_dir) && fs::is_directory(tar_dir), foa::ErrorCode::Io,
               "--batch needs nat/ and tar/ subdirectories");
  std::vector<fs::path> names;
  for (const auto& e : fs::directory_iterator(nat_dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") names.push_back(e.path().filename());
  std::sort(names.begin(), names.end());
  for (const auto& n : names)
    foa::require(fs::exists(tar_dir / n), foa::ErrorCode::MissingPair, "no target for " + n.string());

  const std::size_t workers =
      std::max<std::size_t>(1, a.threads ? a.threads : std::thread::hardware_concurrency());
  std::vector<std::optional<foa::AttackResult>> results(names.size());
  for (std::size_t start = 0; start < names.size(); start += workers) {
    std::vector<std::future<foa::AttackResult>> jobs;
    for (std::size_t i = start; i < std::min(names.size(), start + workers); ++i) {
      foa::AttackConfig cfg = a.cfg;
      cfg.seed = a.cfg.seed + i;
      jobs.push_back(std::async(std::launch::async, attack_one, nat_dir / names[i], tar_dir / names[i],
                                std::cref(encs), cfg, fs::path(a.out) / names[i]));
    }
    for (std::size_t k = 0; k < jobs.size(); ++k) results[start + k] = jobs[k].get();
  }
  for (std::size_t i = 0; i < names.size(); ++i) print_summary(names[i].string(), *results[i]);
  return kExitOk;
}

struct EvalArgs {
  std::string adv_dir, tar_dir, nat_dir, heldout, out = "transfer_report.csv";
  double threshold = foa::kDefaultSuccessThreshold;
};

int run_eval_cmd(const EvalArgs& a) {
  foa::require(a.threshold == a.threshold, foa::ErrorCode::InvalidConfig, "--threshold is NaN");
  const foa::EncoderSpec heldout = foa::io::read_encoder(a.heldout);
  std::optional<fs::path> nat;
  if (!a.nat_dir.empty()) nat = a.nat_dir;
  const auto pairs = foa::load_pairs(a.adv_dir, a.tar_dir, nat);
  const foa::TransferReport rep = foa::evaluate_transfer(pairs, heldout, a.threshold);

  std::printf("%-24s %12s %12s %12s\n", "image", "clean_cos", "adv_cos", "delta");
  for (const auto& r : rep.images) {
    const auto d = r.delta();
    std::printf("%-24s %12s %12.6f %12s\n", r.image.c_str(),
                r.clean_cosine ? std::to_string(*r.clean_cosine).c_str() : "-", r.adv_cosine,
                d ? std::to_string(*d).c_str() : "-");
  }
  std::printf("heldout %s  images %zu  mean_adv_cosine %.6f  success_rate %.4f (cos > %g)\n",
              rep.heldout_encoder.c_str(), rep.images.size(), rep.mean_adv_cosine(), rep.success_rate(),
              rep.threshold);
  if (const auto mc = rep.mean_clean_cosine()) std::printf("mean_clean_cosine %.6f\n", *mc);
  foa::io::write_text(a.out, foa::format_transfer_csv(rep));
  return kExitOk;
}

int run_oracle_cmd(const std::string& suite, std::size_t trials, std::uint64_t seed) {
  const auto reports = foa::oracle::run_suites(suite, trials, seed);
  if (trials == 0) {
    std::printf("no trials requested; nothing to check\n");
    return kExitOk;
  }
  bool ok = true;
  for (const auto& rep : reports) {
    for (const auto& c : rep.checks) {
      std::printf("[%s] %-8s %-58s trials %-5zu worst %.3g (tol %.3g)\n", c.passed ? "PASS" : "FAIL",
                  rep.suite.c_str(), c.name.c_str(), c.trials, c.worst, c.tolerance);
      if (!c.passed) {
        ok = false;
        nlohmann::json j{{"suite", rep.suite}, {"check", c.name}, {"seed", seed}, {"instance", c.failing}};
        std::fprintf(stderr, "%s\n", j.dump().c_str());
      }
    }
  }
  return ok ? kExitOk : kExitOracleFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature-alignment transfer attack on toy encoder ensembles"};
  app.require_subcommand(1);

  AttackArgs atk;
  auto* attack = app.add_subcommand("attack", "craft an adversarial image against an encoder ensemble");
  attack->add_option("--nat", atk.nat, "natural image (PPM)");
  attack->add_option("--tar", atk.tar, "target image (PPM)");
  attack->add_option("--encoders", atk.encoders, "surrogate encoders (FOAE), comma separated")
      ->required()
      ->delimiter(',');
  attack->add_option("--out", atk.out, "output image path, or output directory with --batch")->required();
  attack->add_option("--batch", atk.batch, "directory with nat/ and tar/ subdirectories");
  attack->add_option("--threads", atk.threads, "parallel attacks in batch mode (0 = hardware)");
  attack->add_option("--epsilon", atk.cfg.epsilon, "L-infinity budget")->capture_default_str();
  attack->add_option("--step-size", atk.cfg.step_size, "sign step size")->capture_default_str();
  attack->add_option("--iters", atk.cfg.iterations, "iterations per stage")->capture_default_str();
  attack->add_option("--eta", atk.cfg.eta, "weight of the local transport term")->capture_default_str();
  attack->add_option("--lambda", atk.cfg.lambda, "Sinkhorn entropic regularization")->capture_default_str();
  attack->add_option("--temperature", atk.cfg.temperature, "ensemble weighting temperature")
      ->capture_default_str();
  attack->add_option("--w-init", atk.cfg.w_init, "ensemble weight scale")->capture_default_str();
  attack->add_option("--clusters", atk.clusters, "cluster count schedule, e.g. 3,5")
      ->delimiter(',')
      ->capture_default_str();
  attack->add_option("--seed", atk.cfg.seed, "random seed")->capture_default_str();
  attack->add_option("--crop-min", atk.cfg.crop_scale_min, "minimum crop scale")->capture_default_str();
  attack->add_option("--crop-max", atk.cfg.crop_scale_max, "maximum crop scale")->capture_default_str();
  attack->add_option("--fail-threshold", atk.cfg.fail_threshold, "escalate clusters above this mean loss")
      ->capture_default_str();
  attack->add_flag("--static-weights", atk.static_weights, "pin ensemble weights to w-init");
  attack->add_flag("--no-global", atk.no_global, "drop the global cosine term");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "held-out transfer report");
  eval->add_option("--adv-dir", ev.adv_dir, "adversarial images")->required();
  eval->add_option("--tar-dir", ev.tar_dir, "target images, same file names")->required();
  eval->add_option("--nat-dir", ev.nat_dir, "natural images for the clean baseline");
  eval->add_option("--heldout-encoder", ev.heldout, "held-out encoder (FOAE)")->required();
  eval->add_option("--threshold", ev.threshold, "success threshold on cosine")->required();
  eval->add_option("--out", ev.out, "report CSV")->capture_default_str();

  std::string suite = "all";
  std::size_t trials = 20;
  std::uint64_t oseed = 0;
  auto* orc = app.add_subcommand("oracle", "numerical self-checks");
  orc->add_option("--suite", suite, "grad | ot | kmeans | adjoint | all")
      ->check(CLI::IsMember({"grad", "ot", "kmeans", "adjoint", "all"}))
      ->capture_default_str();
  orc->add_option("--trials", trials, "instances per property")->capture_default_str();
  orc->add_option("--seed", oseed, "random seed")->capture_default_str();

  std::string kind = "patch-linear", enc_out;
  foa::EncoderDims dims;
  std::uint64_t enc_seed = 0;
  std::size_t bands = 0;
  auto* init = app.add_subcommand("init-encoder", "write a randomly initialized toy encoder");
  init->add_option("--kind", kind, "patch-linear | attention-block")->capture_default_str();
  init->add_option("--input-h", dims.input_h)->capture_default_str();
  init->add_option("--input-w", dims.input_w)->capture_default_str();
  init->add_option("--patch", dims.patch_size)->capture_default_str();
  init->add_option("--dim", dims.embed_dim, "embedding width")->capture_default_str();
  init->add_option("--seed", enc_seed)->capture_default_str();
  init->add_option("--filter-bands", bands, "low-frequency filter prior (0 = white)")->capture_default_str();
  init->add_option("--out", enc_out)->required();

  std::size_t img_h = 32, img_w = 32;
  std::uint64_t img_seed = 0;
  std::string img_out;
  auto* sample = app.add_subcommand("sample-image", "write a smooth synthetic test image");
  sample->add_option("--height", img_h)->capture_default_str();
  sample->add_option("--width", img_w)->capture_default_str();
  sample->add_option("--seed", img_seed)->capture_default_str();
  sample->add_option("--out", img_out)->required();

  std::string world_dir;
  std::uint64_t world_seed = 1;
  std::size_t world_images = 1;
  auto* world = app.add_subcommand("toy-world", "write the bundled toy encoders and paired images");
  world->add_option("--dir", world_dir)->required();
  world->add_option("--seed", world_seed, "encoder seed")->capture_default_str();
  world->add_option("--images", world_images, "nat/tar pairs to write")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  }

  try {
    if (*attack) return run_attack_cmd(atk);
    if (*eval) return run_eval_cmd(ev);
    if (*orc) return run_oracle_cmd(suite, trials, oseed);
    if (*init) {
      const fs::path p(enc_out);
      foa::io::write_encoder(p, foa::init_encoder(foa::parse_encoder_kind(kind), dims, enc_seed,
                                                  foa::InitOptions{bands}, p.stem().string()));
      return kExitOk;
    }
    if (*world) {
      const fs::path dir(world_dir);
      for (const auto& e : foa::synth::default_ensemble(world_seed))
        foa::io::write_encoder(dir / "encoders" / (e.name + ".foae"), e);
      const auto h = foa::synth::heldout_encoder(world_seed);
      foa::io::write_encoder(dir / "encoders" / (h.name + ".foae"), h);
      for (std::size_t i = 0; i < world_images; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img%03zu.ppm", i);
        foa::io::write_ppm(dir / "nat" / name, foa::synth::sample_image(32, 32, 1000 + 2 * i));
        foa::io::write_ppm(dir / "tar" / name, foa::synth::sample_image(32, 32, 1001 + 2 * i));
      }
      return kExitOk;
    }
    if (*sample) {
      foa::io::write_ppm(img_out, foa::synth::sample_image(img_h, img_w, img_seed));
      return kExitOk;
    }
  } catch (const foa::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.is_numerical() ? kExitNumerical : kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  }
  return kExitInvalid;
}
