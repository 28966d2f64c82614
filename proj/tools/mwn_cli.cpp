// mwn: connection audits, gradient and equivalence checks, toy detector
// training/evaluation and mask export.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mwn/audit.hpp"
#include "mwn/config.hpp"
#include "mwn/mask_export.hpp"
#include "mwn/toy/detector.hpp"
#include "mwn/toy/settings.hpp"
#include "mwn/weights_io.hpp"

namespace fs = std::filesystem;
using namespace mwn;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_run_args(CLI::App* sub, RunArgs& a) {
  sub->add_option("--config", a.config_path, "Configuration file (key = value lines)");
  sub->add_option("--seed", a.seed, "Seed; overrides the config");
  sub->add_option("overrides", a.overrides, "key=value settings applied after the config file");
}

Config assemble_config(const RunArgs& a, const std::optional<fs::path>& fallback = {}) {
  Config c;
  if (!a.config_path.empty()) {
    c = Config::load(a.config_path);
  } else if (fallback && fs::exists(*fallback)) {
    c = Config::load(fallback->string());
  }
  for (const auto& o : a.overrides) {
    Config one;
    try {
      one = Config::parse(o);
    } catch (const ConfigError& e) {
      throw UsageError("bad override '" + o + "': expected key=value");
    }
    if (one.entries().size() != 1) throw UsageError("bad override '" + o + "': expected key=value");
    c.set(one.entries()[0].key, one.entries()[0].value);
  }
  if (a.seed) c.set("seed", std::to_string(*a.seed));
  return c;
}

fs::path sidecar_of(const fs::path& weights) { return fs::path(weights.string() + ".cfg"); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  os << text;
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

toy::DetectorParams load_detector(const fs::path& weights, const toy::RunSettings& s) {
  if (!fs::exists(weights)) throw UsageError("weight file '" + weights.string() + "' does not exist");
  toy::DetectorParams p = toy::init_detector(s.detector, s.train.seed);
  p.assign(load_weights(weights.string()));
  return p;
}

int cmd_paramcount(const RunArgs& a) {
  const AuditSetup setup = audit_setup_from_config(assemble_config(a), toy::run_config_keys());
  std::printf("%-52s %16s %16s %18s\n", "configuration", "fc_connections", "mwn_parameters", "encoder_parameters");
  for (const AuditRow& r : audit_rows(setup)) {
    std::printf("%-52s %16s %16s %18s\n", r.label.c_str(), with_commas(r.fc_connections).c_str(),
                with_commas(r.mwn_parameters).c_str(), with_commas(r.encoder_parameters).c_str());
  }
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t trials, const std::optional<std::string>& corrupt) {
  if (trials == 0) throw UsageError("--trials must be >= 1");
  if (corrupt) {
    const auto ops = gradcheck_ops();
    if (std::find(ops.begin(), ops.end(), *corrupt) == ops.end()) throw UsageError("unknown op '" + *corrupt + "'");
  }
  const auto reports = merged_gradcheck(seed, trials, corrupt);
  bool ok = true;
  std::printf("gradcheck seeds %llu..%llu\n", static_cast<unsigned long long>(seed),
              static_cast<unsigned long long>(seed + trials - 1));
  std::printf("%-24s %12s %12s %9s  %s\n", "op", "max_rel", "max_abs", "checked", "result");
  for (const auto& r : reports) {
    std::printf("%-24s %12.3e %12.3e %9zu  %s\n", r.op.c_str(), r.max_rel_error, r.max_abs_error, r.checked,
                r.pass ? "PASS" : "FAIL");
    ok = ok && r.pass;
  }
  return ok ? kExitOk : kExitCheckFailed;
}

std::optional<Roi> parse_roi(const std::string& text) {
  Roi r;
  if (std::sscanf(text.c_str(), "%lf,%lf,%lf,%lf", &r.x0, &r.y0, &r.x1, &r.y1) != 4) return std::nullopt;
  return r;
}

int cmd_equiv(std::size_t trials, std::uint64_t seed, std::optional<std::size_t> n, std::optional<std::size_t> np,
              const std::string& roi_text) {
  std::vector<GridMaskSpec> specs = equivalence_specs();
  if (n || np) {
    if (!n || !np) throw UsageError("--n and --n-prime go together");
    specs = {{*n, *np}};
  }
  for (const auto& s : specs) {
    try {
      s.validate();
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
  }

  if (!roi_text.empty()) {
    const auto roi = parse_roi(roi_text);
    if (!roi) throw UsageError("--roi expects x0,y0,x1,y1");
    const GridMaskSpec& spec = specs.front();
    const auto w = static_cast<std::size_t>(std::max(1.0, std::ceil(roi->x1)));
    const auto h = static_cast<std::size_t>(std::max(1.0, std::ceil(roi->y1)));
    Rng rng = Rng::derive(seed, 0);
    const Tensor fmap = rng.normal_tensor({2, h, w}, 1.0);
    Tensor via_masks;
    try {
      via_masks = masked_grid_pool(fmap, *roi, spec);
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
    const bool exact = via_masks == roi_max_pool(fmap, *roi, spec.n);
    std::printf("N=%zu N'=%zu roi %s: %s\n", spec.n, spec.n_prime, roi_text.c_str(), exact ? "exact" : "MISMATCH");
    return exact ? kExitOk : kExitCheckFailed;
  }

  bool ok = true;
  for (const auto& spec : specs) {
    const auto r = run_equivalence(spec, trials, seed);
    std::printf("N=%zu N'=%zu: %zu/%zu exact\n", spec.n, spec.n_prime, r.exact, r.trials);
    ok = ok && r.exact == r.trials;
  }
  return ok ? kExitOk : kExitCheckFailed;
}

int cmd_train(const RunArgs& a, const std::string& out_dir, std::string weights, const std::string& dump_dir,
              std::size_t dump_count) {
  const toy::RunSettings s = toy::settings_from_config(assemble_config(a));
  fs::create_directories(out_dir);
  if (weights.empty()) weights = (fs::path(out_dir) / "weights.bin").string();
  if (!dump_dir.empty()) toy::dump_scenes(dump_dir, s.train.seed, dump_count, s.train.scene);

  const toy::TrainResult r = toy::train(s.detector, s.train);
  const double ap = toy::evaluate(r.params, s.detector, s.train);

  save_weights(weights, r.params.to_named());
  write_text(sidecar_of(weights), toy::settings_to_config(s).to_string());
  std::string curve;
  for (double l : r.loss_curve) curve += format_double(l) + "\n";
  write_text(fs::path(out_dir) / "loss_curve.txt", curve);

  const std::size_t tail = std::min<std::size_t>(100, r.loss_curve.size());
  double tail_mean = 0.0;
  for (std::size_t i = r.loss_curve.size() - tail; i < r.loss_curve.size(); ++i) tail_mean += r.loss_curve[i];
  tail_mean /= static_cast<double>(tail);
  std::printf("variant %s seed %llu steps %zu\n", std::string(variant_name(s.detector.encoder.variant)).c_str(),
              static_cast<unsigned long long>(s.train.seed), s.train.steps);
  std::printf("loss first %.6f last %.6f mean_last_%zu %.6f\n", r.loss_curve.front(), r.loss_curve.back(), tail,
              tail_mean);
  std::printf("AP@0.5 %s\n", format_double(ap).c_str());
  std::printf("weights %s\n", weights.c_str());
  return kExitOk;
}

int cmd_eval(const RunArgs& a, const std::string& weights) {
  if (weights.empty()) throw UsageError("eval needs --weights PATH");
  if (!fs::exists(weights)) throw UsageError("weight file '" + weights + "' does not exist");
  const toy::RunSettings s = toy::settings_from_config(assemble_config(a, sidecar_of(weights)));
  const toy::DetectorParams p = load_detector(weights, s);
  const double ap = toy::evaluate(p, s.detector, s.train);
  std::printf("variant %s eval_scenes %zu\n", std::string(variant_name(s.detector.encoder.variant)).c_str(),
              s.train.eval_scenes);
  std::printf("AP@0.5 %s\n", format_double(ap).c_str());
  return kExitOk;
}

int cmd_export_masks(const RunArgs& a, const std::string& weights, const std::string& out_dir) {
  if (weights.empty()) throw UsageError("export-masks needs --weights PATH");
  if (!fs::exists(weights)) throw UsageError("weight file '" + weights + "' does not exist");
  const toy::RunSettings s = toy::settings_from_config(assemble_config(a, sidecar_of(weights)));
  const toy::DetectorParams p = load_detector(weights, s);
  const ImageExtent extent{toy::kImageSize / toy::kBackboneStride, toy::kImageSize / toy::kBackboneStride};
  const ExportSummary e = export_masks(out_dir, s.detector.encoder, p.encoder, extent);
  std::printf("MWN-l masks %zu, MWN-g masks %zu, written to %s\n", e.local_masks, e.global_masks, out_dir.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mask-weight-network ROI encoder: audits, checks and toy detection"};
  app.require_subcommand(1);

  RunArgs paramcount_args;
  auto* paramcount = app.add_subcommand("paramcount", "FC connection and parameter counts");
  add_run_args(paramcount, paramcount_args);

  std::uint64_t seed = 0;
  std::size_t grad_trials = 10;
  std::optional<std::string> corrupt;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  gradcheck->add_option("--seed", seed, "First seed");
  gradcheck->add_option("--trials", grad_trials, "Number of consecutive seeds");
  gradcheck->add_option("--corrupt", corrupt, "Perturb one op's analytic gradient (negative control)")
      ->group("");

  std::size_t equiv_trials = 100;
  std::optional<std::size_t> equiv_n, equiv_np;
  std::string equiv_roi;
  auto* equiv = app.add_subcommand("equiv", "Grid max pooling via masks vs direct max ROI pooling");
  equiv->add_option("--trials", equiv_trials, "Random aligned instances per spec");
  equiv->add_option("--seed", seed, "Seed");
  equiv->add_option("--n", equiv_n, "Output grid size N");
  equiv->add_option("--n-prime", equiv_np, "Initial pooling size N'");
  equiv->add_option("--roi", equiv_roi, "Check a single ROI x0,y0,x1,y1 instead of random trials");

  RunArgs train_args;
  std::string out_dir = ".", weights, dump_dir;
  std::size_t dump_count = 16;
  auto* train = app.add_subcommand("train", "Train a toy detector, evaluate it and save its weights");
  add_run_args(train, train_args);
  train->add_option("--out", out_dir, "Output directory (weights.bin, loss_curve.txt)");
  train->add_option("--weights", weights, "Weight file path (default OUT/weights.bin)");
  train->add_option("--dump-scenes", dump_dir, "Also write training scenes as PGM + boxes.txt");
  train->add_option("--dump-count", dump_count, "Scenes written by --dump-scenes");

  RunArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate saved weights (AP@0.5)");
  add_run_args(eval, eval_args);
  eval->add_option("--weights", weights, "Weight file")->required();

  RunArgs export_args;
  auto* export_masks_cmd = app.add_subcommand("export-masks", "Write learned masks as PGM + CSV");
  add_run_args(export_masks_cmd, export_args);
  export_masks_cmd->add_option("--weights", weights, "Weight file")->required();
  export_masks_cmd->add_option("--out", out_dir, "Output directory");

  std::size_t scene_count = 16;
  auto* dump = app.add_subcommand("dump-scenes", "Write toy scenes as PGM + boxes.txt");
  dump->add_option("--out", dump_dir, "Output directory")->required();
  dump->add_option("--seed", seed, "Scene stream seed");
  dump->add_option("--trials,--count", scene_count, "Number of scenes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*paramcount) return cmd_paramcount(paramcount_args);
    if (*gradcheck) return cmd_gradcheck(seed, grad_trials, corrupt);
    if (*equiv) return cmd_equiv(equiv_trials, seed, equiv_n, equiv_np, equiv_roi);
    if (*train) return cmd_train(train_args, out_dir, weights, dump_dir, dump_count);
    if (*eval) return cmd_eval(eval_args, weights);
    if (*export_masks_cmd) return cmd_export_masks(export_args, weights, out_dir);
    if (*dump) {
      toy::dump_scenes(dump_dir, seed, scene_count);
      std::printf("%zu scenes written to %s\n", scene_count, dump_dir.c_str());
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitCheckFailed;
  }
  return kExitUsage;
}
