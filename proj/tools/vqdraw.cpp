// Command-line front end: train, encode, decode, sample, reconstruct,
// stages, grad-check. Exit codes: 0 success, 1 usage error, 2 data/format
// error, 3 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "vqdraw/checkpoint.hpp"
#include "vqdraw/codec.hpp"
#include "vqdraw/code_format.hpp"
#include "vqdraw/data_io.hpp"
#include "vqdraw/grad_check.hpp"
#include "vqdraw/kernels.hpp"
#include "vqdraw/training.hpp"

namespace fs = std::filesystem;
using namespace vqdraw;

namespace {

struct RunSpec {
  std::string images, labels, mixture, out_dir, checkpoint, resume;
  std::vector<std::string> codes;
  RefinerConfig refiner;
  TrainConfig train;
  int mixture_count = 10000;
  long checkpoint_interval = 500;
  long grid_interval = 500;
  int limit = 25;
  int rows = 5, cols = 5;
  std::uint64_t sample_seed = 0;
  bool parallel = false;
};

void add_refiner_flags(CLI::App* cmd, RefinerConfig& cfg) {
  cmd->add_option("--arch", cfg.arch, "refiner architecture: dense | cnn")
      ->check(CLI::IsMember({"dense", "cnn"}));
  cmd->add_option("--options", cfg.options, "choices per stage (K)");
  cmd->add_option("--stages", cfg.stages, "number of stages (N)");
  cmd->add_option("--stages-per-segment", cfg.stages_per_segment,
                  "stages sharing one parameter set");
  cmd->add_option("--hidden", cfg.hidden, "dense hidden width");
  cmd->add_option("--channels", cfg.channels, "cnn feature channels");
  cmd->add_option("--res-blocks", cfg.res_blocks, "cnn residual blocks");
  cmd->add_option("--gn-groups", cfg.gn_groups, "group-norm groups");
  cmd->add_option("--init-seed", cfg.init_seed, "parameter init seed");
}

void add_train_flags(CLI::App* cmd, TrainConfig& cfg) {
  cmd->add_option("--alpha", cfg.alpha, "unchosen-loss weight");
  cmd->add_option("--batch-size", cfg.batch_size, "examples per update");
  cmd->add_option("--micro-batch", cfg.micro_batch,
                  "accumulation slice (divides batch size)");
  cmd->add_option("--steps", cfg.steps, "optimizer steps to run");
  cmd->add_option("--lr", cfg.lr, "Adam step size");
  cmd->add_option("--seed", cfg.seed, "data-order seed");
}

Dataset load_dataset(const RunSpec& spec) {
  if (!spec.images.empty()) return load_idx(spec.images, spec.labels);
  if (!spec.mixture.empty())
    return gen_mixture(read_mixture_spec(spec.mixture), spec.mixture_count);
  throw FormatError("no dataset: pass --images or --mixture");
}

void write_manifest(const fs::path& dir, const std::string& command,
                    const RunSpec& spec) {
  std::ofstream f(dir / "manifest.txt", std::ios::trunc);
  if (!f) throw FormatError("cannot write manifest in '" + dir.string() + "'");
  f << "command = " << command << "\n"
    << "images = " << spec.images << "\n"
    << "labels = " << spec.labels << "\n"
    << "mixture = " << spec.mixture << "\n"
    << "mixture_count = " << spec.mixture_count << "\n"
    << "checkpoint = " << spec.checkpoint << "\n"
    << "resume = " << spec.resume << "\n"
    << "arch = " << spec.refiner.arch << "\n"
    << "options = " << spec.refiner.options << "\n"
    << "stages = " << spec.refiner.stages << "\n"
    << "stages_per_segment = " << spec.refiner.stages_per_segment << "\n"
    << "data_shape = " << shape_str(spec.refiner.data_shape) << "\n"
    << "hidden = " << spec.refiner.hidden << "\n"
    << "channels = " << spec.refiner.channels << "\n"
    << "res_blocks = " << spec.refiner.res_blocks << "\n"
    << "gn_groups = " << spec.refiner.gn_groups << "\n"
    << "init_seed = " << spec.refiner.init_seed << "\n"
    << "alpha = " << spec.train.alpha << "\n"
    << "batch_size = " << spec.train.batch_size << "\n"
    << "micro_batch = " << spec.train.micro_batch << "\n"
    << "steps = " << spec.train.steps << "\n"
    << "lr = " << spec.train.lr << "\n"
    << "seed = " << spec.train.seed << "\n"
    << "checkpoint_interval = " << spec.checkpoint_interval << "\n"
    << "grid_interval = " << spec.grid_interval << "\n"
    << "parallel = " << (spec.parallel ? 1 : 0) << "\n";
}

bool image_shaped(const Shape& s) {
  return s.size() == 3 && (s[0] == 1 || s[0] == 3);
}

void require_image_shaped(const Shape& s, const std::string& what) {
  if (!image_shaped(s))
    throw FormatError(what + ": checkpoint data shape " + shape_str(s) +
                      " is not 1xHxW or 3xHxW");
}

LoadedCheckpoint load_required_checkpoint(const RunSpec& spec) {
  if (spec.checkpoint.empty())
    throw FormatError("missing --checkpoint");
  return load_checkpoint(spec.checkpoint);
}

void emit_sample_grid(const Refiner<float>& refiner, int rows, int cols,
                      std::uint64_t seed, const std::string& path) {
  NoGradGuard ng;
  std::mt19937_64 rng(seed);
  std::vector<std::vector<float>> tiles;
  for (int i = 0; i < rows * cols; ++i)
    tiles.push_back(sample(refiner, rng).values());
  const long clipped = write_image_grid(tiles, refiner.config().data_shape,
                                        rows, cols, path);
  if (clipped > 0)
    std::cerr << "warning: " << clipped << " out-of-range values clipped in "
              << path << "\n";
}

// One row per input: target left-most, then the first 20 (or fewer) stage
// reconstructions.
void emit_stages_grid(const Refiner<float>& refiner,
                      const std::vector<Tensor<float>>& targets,
                      const std::string& path) {
  NoGradGuard ng;
  const int n_cols = std::min(refiner.config().stages, 20) + 1;
  std::vector<std::vector<float>> tiles;
  for (const auto& x : targets) {
    auto trace = encode(x, refiner);
    tiles.push_back(x.values());
    for (int i = 0; i < n_cols - 1; ++i)
      tiles.push_back(trace.stages[i].reconstruction.values());
  }
  const long clipped =
      write_image_grid(tiles, refiner.config().data_shape,
                       (int)targets.size(), n_cols, path);
  if (clipped > 0)
    std::cerr << "warning: " << clipped << " out-of-range values clipped in "
              << path << "\n";
}

// ---------------------------------------------------------------------------

int cmd_train(RunSpec& spec, bool resume_flags_set) {
  auto data = load_dataset(spec);
  spec.refiner.data_shape = data.data_shape;
  if (data.data_shape.size() == 1 && spec.refiner.arch == "cnn")
    spec.refiner.arch = "dense";

  std::unique_ptr<Refiner<float>> refiner;
  AdamState<float> adam;
  long step0 = 0;
  std::mt19937_64 order_rng(spec.train.seed);

  if (!spec.resume.empty()) {
    auto ck = load_checkpoint(spec.resume);
    if (resume_flags_set &&
        (ck.refiner_cfg.arch != spec.refiner.arch ||
         ck.refiner_cfg.options != spec.refiner.options ||
         ck.refiner_cfg.stages != spec.refiner.stages ||
         ck.refiner_cfg.stages_per_segment != spec.refiner.stages_per_segment))
      throw FormatError("resume: checkpoint architecture (" +
                        ck.refiner_cfg.arch + ", K=" +
                        std::to_string(ck.refiner_cfg.options) + ", N=" +
                        std::to_string(ck.refiner_cfg.stages) +
                        ") conflicts with the requested flags");
    if (ck.refiner_cfg.data_shape != data.data_shape)
      throw FormatError("resume: checkpoint data shape " +
                        shape_str(ck.refiner_cfg.data_shape) +
                        " does not match dataset " + shape_str(data.data_shape));
    spec.refiner = ck.refiner_cfg;
    const long steps_requested = spec.train.steps;
    spec.train = ck.train_cfg;
    spec.train.steps = steps_requested;
    refiner = std::move(ck.refiner);
    adam = std::move(ck.adam);
    step0 = ck.step;
    order_rng.seed(spec.train.seed);
  } else {
    refiner = build_refiner<float>(spec.refiner);
  }

  fs::create_directories(spec.out_dir);
  write_manifest(spec.out_dir, "train", spec);

  Trainer<float> trainer(std::move(refiner), spec.train);
  trainer.adam() = std::move(adam);
  trainer.set_step_count(step0);

  const fs::path out(spec.out_dir);
  const std::string ckpt_path = (out / "checkpoint.vqdr").string();
  auto save = [&]() {
    save_checkpoint(ckpt_path, trainer.refiner(), spec.train, trainer.adam(),
                    trainer.step_count(), order_rng);
  };

  std::ofstream metrics(out / "metrics.csv",
                        step0 > 0 ? std::ios::app : std::ios::trunc);
  if (step0 == 0) metrics << metrics_csv_header() << "\n";

  std::vector<int> perm;
  auto next_index = [&]() {
    if (perm.empty()) {
      perm.resize(data.examples.size());
      for (size_t i = 0; i < perm.size(); ++i) perm[i] = (int)i;
      std::shuffle(perm.begin(), perm.end(), order_rng);
    }
    const int i = perm.back();
    perm.pop_back();
    return i;
  };
  // The index stream is a pure function of the seed, so resuming replays it
  // up to the checkpointed step instead of persisting the permutation.
  for (long i = 0; i < step0 * spec.train.batch_size; ++i) next_index();

  const bool grids = image_shaped(data.data_shape);
  for (long s = 0; s < spec.train.steps; ++s) {
    std::vector<Tensor<float>> batch;
    for (int b = 0; b < spec.train.batch_size; ++b)
      batch.push_back(data.example(next_index()));
    auto row = trainer.train_step(batch);
    metrics << to_csv_row(row) << "\n";
    metrics.flush();
    if (!row.applied)
      std::cerr << "warning: " << trainer.last_incident() << "\n";
    if (spec.checkpoint_interval > 0 &&
        trainer.step_count() % spec.checkpoint_interval == 0)
      save();
    if (grids && spec.grid_interval > 0 &&
        trainer.step_count() % spec.grid_interval == 0) {
      const long t = trainer.step_count();
      emit_sample_grid(trainer.refiner(), spec.rows, spec.cols,
                       spec.sample_seed,
                       (out / ("samples_" + std::to_string(t) + ".pgm")).string());
      std::vector<Tensor<float>> targets;
      for (int i = 0; i < std::min(5, (int)data.examples.size()); ++i)
        targets.push_back(data.example(i));
      emit_stages_grid(trainer.refiner(), targets,
                       (out / ("stages_" + std::to_string(t) + ".pgm")).string());
    }
  }
  save();
  std::cout << "trained to step " << trainer.step_count() << ", checkpoint at "
            << ckpt_path << "\n";
  return 0;
}

int cmd_encode(RunSpec& spec) {
  auto ck = load_required_checkpoint(spec);
  auto data = load_idx(spec.images, spec.labels);
  if (data.data_shape != ck.refiner_cfg.data_shape)
    throw FormatError("encode: dataset shape " + shape_str(data.data_shape) +
                      " does not match checkpoint " +
                      shape_str(ck.refiner_cfg.data_shape));
  fs::create_directories(spec.out_dir);
  write_manifest(spec.out_dir, "encode", spec);
  NoGradGuard ng;
  const int n = std::min(spec.limit, (int)data.examples.size());
  for (int i = 0; i < n; ++i) {
    auto trace = encode(data.example(i), *ck.refiner);
    std::ostringstream name;
    name << "code_" << std::setw(5) << std::setfill('0') << i << ".vqdc";
    write_code_file((fs::path(spec.out_dir) / name.str()).string(),
                    trace.code(ck.refiner_cfg.options));
  }
  std::cout << "encoded " << n << " images into " << spec.out_dir << "\n";
  return 0;
}

int cmd_decode(RunSpec& spec) {
  auto ck = load_required_checkpoint(spec);
  require_image_shaped(ck.refiner_cfg.data_shape, "decode");
  fs::create_directories(spec.out_dir);
  write_manifest(spec.out_dir, "decode", spec);
  NoGradGuard ng;
  for (const auto& code_path : spec.codes) {
    auto code = read_code_file(code_path);
    if (code.options != ck.refiner_cfg.options ||
        code.stages() != ck.refiner_cfg.stages)
      throw FormatError("decode: code '" + code_path + "' (K=" +
                        std::to_string(code.options) + ", N=" +
                        std::to_string(code.stages()) +
                        ") does not match checkpoint (K=" +
                        std::to_string(ck.refiner_cfg.options) + ", N=" +
                        std::to_string(ck.refiner_cfg.stages) + ")");
    auto recon = decode(code, *ck.refiner);
    const auto name = fs::path(code_path).stem().string() + ".pgm";
    write_image_grid({recon.values()}, ck.refiner_cfg.data_shape, 1, 1,
                     (fs::path(spec.out_dir) / name).string());
  }
  std::cout << "decoded " << spec.codes.size() << " codes into "
            << spec.out_dir << "\n";
  return 0;
}

int cmd_reconstruct(RunSpec& spec) {
  auto ck = load_required_checkpoint(spec);
  require_image_shaped(ck.refiner_cfg.data_shape, "reconstruct");
  auto data = load_idx(spec.images, spec.labels);
  if (data.data_shape != ck.refiner_cfg.data_shape)
    throw FormatError("reconstruct: dataset shape " +
                      shape_str(data.data_shape) +
                      " does not match checkpoint " +
                      shape_str(ck.refiner_cfg.data_shape));
  fs::create_directories(spec.out_dir);
  write_manifest(spec.out_dir, "reconstruct", spec);
  NoGradGuard ng;
  const int n = std::min(spec.limit, (int)data.examples.size());
  std::vector<std::vector<float>> tiles;
  for (int i = 0; i < n; ++i) {
    auto x = data.example(i);
    tiles.push_back(x.values());
    tiles.push_back(encode(x, *ck.refiner).final_reconstruction.values());
  }
  const auto path = (fs::path(spec.out_dir) / "reconstructions.pgm").string();
  const long clipped =
      write_image_grid(tiles, ck.refiner_cfg.data_shape, n, 2, path);
  if (clipped > 0)
    std::cerr << "warning: " << clipped << " out-of-range values clipped\n";
  std::cout << "wrote " << path << " (target | reconstruction per row)\n";
  return 0;
}

int cmd_sample(RunSpec& spec) {
  auto ck = load_required_checkpoint(spec);
  require_image_shaped(ck.refiner_cfg.data_shape, "sample");
  fs::create_directories(spec.out_dir);
  write_manifest(spec.out_dir, "sample", spec);
  const auto path = (fs::path(spec.out_dir) / "samples.pgm").string();
  emit_sample_grid(*ck.refiner, spec.rows, spec.cols, spec.sample_seed, path);
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_stages(RunSpec& spec) {
  auto ck = load_required_checkpoint(spec);
  require_image_shaped(ck.refiner_cfg.data_shape, "stages");
  auto data = load_idx(spec.images, spec.labels);
  if (data.data_shape != ck.refiner_cfg.data_shape)
    throw FormatError("stages: dataset shape " + shape_str(data.data_shape) +
                      " does not match checkpoint " +
                      shape_str(ck.refiner_cfg.data_shape));
  fs::create_directories(spec.out_dir);
  write_manifest(spec.out_dir, "stages", spec);
  std::vector<Tensor<float>> targets;
  for (int i = 0; i < std::min(spec.limit, (int)data.examples.size()); ++i)
    targets.push_back(data.example(i));
  const auto path = (fs::path(spec.out_dir) / "stages.pgm").string();
  emit_stages_grid(*ck.refiner, targets, path);
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_grad_check(RunSpec& spec, double fd_step, double tol) {
  if (spec.refiner.arch == "cnn" && spec.refiner.data_shape.size() != 3)
    spec.refiner.data_shape = {1, 8, 8};
  if (spec.refiner.arch == "dense" && spec.refiner.data_shape.size() != 1)
    spec.refiner.data_shape = {8};
  auto refiner = build_refiner<double>(spec.refiner);

  std::mt19937_64 rng(spec.sample_seed);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> xv(shape_numel(spec.refiner.data_shape));
  for (auto& v : xv) v = d(rng);
  auto x = Tensor<double>::from_data(spec.refiner.data_shape, xv);

  const auto code = [&] {
    NoGradGuard ng;
    return encode(x, *refiner).code(spec.refiner.options);
  }();
  auto f = [&]() {
    return loss_total(encode_with_choices(x, *refiner, code),
                      spec.train.alpha).total;
  };
  std::vector<Tensor<double>> params;
  for (auto& p : refiner->parameters()) params.push_back(p.tensor);
  auto report = grad_check(f, params, fd_step, tol);

  std::cout << "checked " << report.checked << " coordinates, excluded "
            << report.excluded << " (kinks)\n"
            << "max relative error " << report.max_rel_error;
  if (report.worst_param >= 0)
    std::cout << " at " << refiner->parameters()[report.worst_param].name
              << "[" << report.worst_elem << "]";
  std::cout << "\n" << (report.passed ? "PASS" : "FAIL") << " (tolerance "
            << tol << ")\n";
  return report.passed ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequential discrete auto-encoder: train, encode, decode"};
  app.require_subcommand(1);

  RunSpec spec;
  double fd_step = 1e-5, tol = 1e-6;

  auto* train = app.add_subcommand("train", "train a refiner");
  train->set_config("--config");
  train->add_option("--images", spec.images, "IDX image file");
  train->add_option("--labels", spec.labels, "IDX label file (optional)");
  train->add_option("--mixture", spec.mixture, "mixture spec file");
  train->add_option("--mixture-count", spec.mixture_count,
                    "points to draw from the mixture");
  train->add_option("--out", spec.out_dir, "output directory")->required();
  train->add_option("--resume", spec.resume, "checkpoint to resume from");
  train->add_option("--checkpoint-interval", spec.checkpoint_interval,
                    "steps between checkpoints (0 = only at the end)");
  train->add_option("--grid-interval", spec.grid_interval,
                    "steps between sample/stage grids (0 = never)");
  train->add_flag("--parallel", spec.parallel, "enable OpenMP kernels");
  add_refiner_flags(train, spec.refiner);
  add_train_flags(train, spec.train);

  auto* enc = app.add_subcommand("encode", "encode images to code files");
  enc->set_config("--config");
  enc->add_option("--checkpoint", spec.checkpoint)->required();
  enc->add_option("--images", spec.images)->required();
  enc->add_option("--labels", spec.labels);
  enc->add_option("--out", spec.out_dir)->required();
  enc->add_option("--limit", spec.limit, "max images to encode");

  auto* dec = app.add_subcommand("decode", "decode code files to images");
  dec->set_config("--config");
  dec->add_option("--checkpoint", spec.checkpoint)->required();
  dec->add_option("--codes", spec.codes, "code files")->required();
  dec->add_option("--out", spec.out_dir)->required();

  auto* rec = app.add_subcommand("reconstruct",
                                 "encode+decode images into a comparison grid");
  rec->set_config("--config");
  rec->add_option("--checkpoint", spec.checkpoint)->required();
  rec->add_option("--images", spec.images)->required();
  rec->add_option("--labels", spec.labels);
  rec->add_option("--out", spec.out_dir)->required();
  rec->add_option("--limit", spec.limit, "max images");

  auto* smp = app.add_subcommand("sample", "draw uniform codes and decode");
  smp->set_config("--config");
  smp->add_option("--checkpoint", spec.checkpoint)->required();
  smp->add_option("--out", spec.out_dir)->required();
  smp->add_option("--rows", spec.rows);
  smp->add_option("--cols", spec.cols);
  smp->add_option("--seed", spec.sample_seed);

  auto* stg = app.add_subcommand("stages", "per-stage reconstruction grid");
  stg->set_config("--config");
  stg->add_option("--checkpoint", spec.checkpoint)->required();
  stg->add_option("--images", spec.images)->required();
  stg->add_option("--labels", spec.labels);
  stg->add_option("--out", spec.out_dir)->required();
  stg->add_option("--limit", spec.limit, "rows in the grid");

  // grad-check gets its own small defaults; finite differences over the full
  // MNIST profile would take hours
  RunSpec gspec;
  gspec.refiner.options = 4;
  gspec.refiner.stages = 2;
  gspec.refiner.stages_per_segment = 2;
  gspec.refiner.channels = 4;
  gspec.refiner.res_blocks = 1;
  gspec.refiner.gn_groups = 2;
  gspec.refiner.hidden = 8;
  auto* gck = app.add_subcommand("grad-check",
                                 "verify gradients against finite differences");
  gck->set_config("--config");
  add_refiner_flags(gck, gspec.refiner);
  gck->add_option("--alpha", gspec.train.alpha);
  gck->add_option("--seed", gspec.sample_seed);
  gck->add_option("--fd-step", fd_step);
  gck->add_option("--tol", tol);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  kernels::set_parallel(spec.parallel);
  if (!train->count("--micro-batch"))
    spec.train.micro_batch = spec.train.batch_size;
  const bool resume_flags_set =
      train->count("--arch") || train->count("--options") ||
      train->count("--stages") || train->count("--stages-per-segment");

  try {
    if (*train) return cmd_train(spec, resume_flags_set);
    if (*enc) return cmd_encode(spec);
    if (*dec) return cmd_decode(spec);
    if (*rec) return cmd_reconstruct(spec);
    if (*smp) return cmd_sample(spec);
    if (*stg) return cmd_stages(spec);
    if (*gck) return cmd_grad_check(gspec, fd_step, tol);
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
