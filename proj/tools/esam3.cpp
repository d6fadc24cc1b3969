// esam3: data generation, staged training, evaluation and the memory benchmark.
#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "esam3/error.hpp"
#include "esam3/memory/cost.hpp"
#include "esam3/schedule/evaluate.hpp"
#include "esam3/schedule/run.hpp"
#include "esam3/sim/dataset.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace esam3;

namespace {

constexpr int kExitOk = 0, kExitRuntime = 1, kExitArgs = 2, kExitPrecondition = 3, kExitNumerical = 4;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kShape:
      return kExitArgs;
    case ErrorKind::kPrecondition:
      return kExitPrecondition;
    case ErrorKind::kNumerical:
      return kExitNumerical;
    default:
      return kExitRuntime;
  }
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kInvalidArgument, "cannot read config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidArgument, "config '" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) fail(ErrorKind::kIo, "write failed for '" + path.string() + "'");
}

/// Written on every exit path once the command has been parsed.
struct RunManifest {
  std::string command, config;
  std::uint64_t seed = 0;
  std::string started = timestamp();
  std::vector<std::string> outputs;
  fs::path dir;

  void write(int code, const std::string& message) const {
    if (dir.empty()) return;
    json j = {{"command", command},
              {"config", config},
              {"seed", seed},
              {"git_describe", ESAM3_GIT_DESCRIBE},
              {"started", started},
              {"finished", timestamp()},
              {"outputs", outputs},
              {"exit_code", code},
              {"status", code == 0 ? "ok" : "error"},
              {"message", message}};
    try {
      fs::create_directories(dir);
      std::ofstream(dir / "run_manifest.json") << j.dump(2) << "\n";
    } catch (const std::exception&) {
    }
  }
};

fs::path cache_root(const fs::path& fallback) { return prompt::TeacherCache::resolve_root(fallback); }

// ---- gen-data ----

struct GenDataArgs {
  std::string config, out;
  std::uint64_t seed = 42;
  std::optional<int> scenes, clips;
};

void gen_data(const GenDataArgs& a, RunManifest& m) {
  sim::DataSpec spec;
  if (!a.config.empty()) read_json(a.config).get_to(spec);
  if (a.scenes) spec.num_scenes = *a.scenes;
  if (a.clips) spec.num_clips = *a.clips;
  auto data = sim::generate_dataset(spec, a.seed);
  sim::save_dataset(data, a.out);
  m.outputs.push_back(a.out);
  std::cout << "wrote " << data.scenes.size() << " scenes and " << data.clips.size() << " clips to " << a.out << "\n";
}

// ---- train ----

struct TrainArgs {
  int stage = 1;
  std::string config, data, from_checkpoint, out, model = "ES-RV-S", teacher;
  std::uint64_t seed = 42;
  std::optional<int> steps;
};

void train(const TrainArgs& a, RunManifest& m) {
  sched::StageConfig cfg = sched::desk_preset(a.stage);
  if (!a.config.empty()) cfg = read_json(a.config).get<sched::StageConfig>();
  if (cfg.stage != a.stage) {
    fail(ErrorKind::kInvalidArgument, "config is for stage " + std::to_string(cfg.stage) + " but --stage is " +
                                          std::to_string(a.stage));
  }
  if (a.steps) {
    cfg.total_steps = *a.steps;
    cfg.validate();
  }
  m.seed = cfg.seed;

  std::optional<sim::Dataset> dataset;
  if (!a.data.empty()) dataset = sim::load_dataset(a.data);

  sched::Checkpoint input;
  if (!a.from_checkpoint.empty()) {
    input = sched::load_checkpoint(a.from_checkpoint);
  } else if (a.stage > 1) {
    fail(ErrorKind::kPrecondition, "stage " + std::to_string(a.stage) +
                                       " needs --from-checkpoint pointing at the stage " + std::to_string(a.stage - 1) +
                                       " output");
  } else {
    model::ModelConfig mcfg;
    mcfg.encoder = sched::zoo_entry(a.model).encoder;
    prompt::TeacherConfig tcfg;
    if (!a.teacher.empty()) read_json(a.teacher).get_to(tcfg);
    const sim::SceneConfig scfg = dataset ? dataset->config : sim::SceneConfig{};
    input = sched::initial_checkpoint(a.model, mcfg, tcfg, scfg, cfg.seed);
  }

  sched::DataSource source{input.scene, dataset ? &*dataset : nullptr, cfg.seed};
  prompt::TeacherCache cache(cache_root(fs::path(a.out) / "teacher_cache"));
  sched::RunOptions opt;
  opt.out_dir = a.out;
  opt.cache = &cache;
  const int every = std::max(1, cfg.total_steps / 20);
  opt.on_step = [&](const json& r) {
    const int step = r.at("step").get<int>();
    if (step % every == 0 || step + 1 == cfg.total_steps) {
      std::cout << "stage " << cfg.stage << " step " << step << " loss " << r.at("loss_total").get<double>() << " lr "
                << r.at("lr").get<double>() << "\n";
    }
  };
  write_text(fs::path(a.out) / "stage_config.json", json(cfg).dump(2) + "\n");
  auto result = sched::run_stage(cfg, input, source, opt);
  m.outputs = {(fs::path(a.out) / "checkpoint").string(), (fs::path(a.out) / "metrics.jsonl").string()};
  std::cout << "checkpoint: " << m.outputs[0] << " (stage " << result.checkpoint.stage << ", step "
            << result.checkpoint.step << ")\n";
}

// ---- eval ----

struct EvalArgs {
  std::string checkpoint, data, metrics = "miou", predictor = "student", out;
  std::uint64_t seed = 42;
  int count = 100;
  bool no_memory = false;
};

void evaluate(const EvalArgs& a, RunManifest& m) {
  m.seed = a.seed;
  const auto ckpt = sched::load_checkpoint(a.checkpoint);
  const auto predictor = sched::predictor_from_name(a.predictor);
  const auto student = ckpt.eval_student();
  std::optional<sim::Dataset> data;
  if (!a.data.empty()) data = sim::load_dataset(a.data);
  const sim::SceneConfig scfg = data ? data->config : ckpt.scene;
  if (scfg.feature_stride != ckpt.scene.feature_stride) {
    fail(ErrorKind::kInvalidArgument, "dataset feature stride differs from the checkpoint's");
  }

  json report = {{"metric", a.metrics}, {"predictor", a.predictor}, {"checkpoint", a.checkpoint}};
  if (a.metrics == "miou") {
    std::vector<sim::SyntheticScene> scenes;
    std::vector<std::string> ids;
    if (data) {
      if (data->scenes.empty()) fail(ErrorKind::kInvalidArgument, "miou needs a dataset with scenes");
      scenes = data->scenes;
      ids = data->scene_ids;
    } else {
      scenes = sched::eval_scenes(scfg, a.seed, a.count);
      for (int i = 0; i < a.count; ++i) ids.push_back("eval/scene/" + std::to_string(i));
    }
    const auto teacher = sched::make_teacher(ckpt.teacher, ckpt.model, scfg);
    const auto r = sched::eval_prompt_miou(student, teacher, scfg, scenes, a.seed, predictor);
    json per = json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) per.push_back({{"id", ids[i]}, {"miou", r.report.per_scene[i]}});
    report["aggregate"] = r.report.miou;
    report["instances"] = r.instances;
    report["per_scene"] = per;
  } else if (a.metrics == "jf") {
    std::vector<std::vector<sim::SyntheticScene>> clips;
    std::vector<std::string> ids;
    if (data) {
      if (data->clips.empty()) fail(ErrorKind::kInvalidArgument, "jf needs a dataset with clips, this one holds images only");
      clips = data->clips;
      ids = data->clip_ids;
    } else {
      clips = sched::eval_clips(scfg, a.seed, a.count);
      for (int i = 0; i < a.count; ++i) ids.push_back("eval/clip/" + std::to_string(i));
    }
    const auto r = sched::eval_tracking(student, scfg, clips, !a.no_memory, a.seed, predictor);
    json per = json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) per.push_back({{"id", ids[i]}, {"j", r.per_clip_j[i]}});
    report["memory"] = !a.no_memory;
    report["aggregate"] = {{"j", r.score.j}, {"f", r.score.f}, {"jf", r.score.jf}};
    report["tracks"] = r.tracks;
    report["per_clip"] = per;
  } else {
    fail(ErrorKind::kInvalidArgument, "unknown metric '" + a.metrics + "'");
  }
  write_text(a.out, report.dump(2) + "\n");
  m.outputs.push_back(a.out);
  std::cout << a.metrics << " " << report["aggregate"].dump() << "\n";
}

// ---- bench-memory ----

struct BenchArgs {
  std::vector<std::int64_t> tokens{512, 1024, 2048, 4096};
  std::int64_t k = 128, c = 64, dk = 16, queries = 64;
  int repeats = 20;
  std::uint64_t seed = 42;
  std::string out;
};

void bench_memory(const BenchArgs& a, RunManifest& m) {
  m.seed = a.seed;
  for (auto n : a.tokens)
    if (n <= 0) fail(ErrorKind::kInvalidArgument, "--tokens must be positive");
  if (a.k <= 0 || a.c <= 0 || a.dk <= 0 || a.queries <= 0 || a.repeats <= 0) {
    fail(ErrorKind::kInvalidArgument, "--k, --c, --dk, --queries and --repeats must be positive");
  }
  std::string csv = mem::bench_csv_header() + "\n";
  for (auto n : a.tokens) {
    csv += mem::bench_csv_row(mem::bench_readout(n, a.k, a.c, a.dk, a.queries, a.repeats, a.seed)) + "\n";
  }
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    write_text(a.out, csv);
    m.outputs.push_back(a.out);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EfficientSAM3-style progressive distillation at desk scale"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic scene/clip dataset");
  gen->add_option("--config", gd.config, "Data spec JSON");
  gen->add_option("--out", gd.out, "Output directory")->required();
  gen->add_option("--seed", gd.seed, "Root seed");
  gen->add_option("--scenes", gd.scenes, "Override the number of scenes");
  gen->add_option("--clips", gd.clips, "Override the number of clips");

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "Run one distillation stage");
  trn->add_option("--stage", tr.stage, "Stage 1, 2 or 3")->required()->check(CLI::Range(1, 3));
  trn->add_option("--config", tr.config, "Stage config JSON (default: desk preset)");
  trn->add_option("--data", tr.data, "Dataset directory (default: procedural batches)");
  trn->add_option("--from-checkpoint", tr.from_checkpoint, "Checkpoint of the previous stage");
  trn->add_option("--out", tr.out, "Run directory")->required();
  trn->add_option("--model", tr.model, "Model zoo entry for a fresh stage-1 run");
  trn->add_option("--teacher", tr.teacher, "Teacher config JSON for a fresh stage-1 run");
  trn->add_option("--steps", tr.steps, "Override total_steps");

  EvalArgs ev;
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint");
  evl->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  evl->add_option("--data", ev.data, "Dataset directory (default: held-out procedural set)");
  evl->add_option("--metrics", ev.metrics, "miou or jf")->check(CLI::IsMember({"miou", "jf"}));
  evl->add_option("--predictor", ev.predictor, "student, teacher or empty")
      ->check(CLI::IsMember({"student", "teacher", "empty"}));
  evl->add_option("--count", ev.count, "Held-out set size without --data")->check(CLI::PositiveNumber);
  evl->add_option("--seed", ev.seed, "Evaluation seed");
  evl->add_flag("--no-memory", ev.no_memory, "Track from the no-memory token only");
  evl->add_option("--out", ev.out, "Report JSON path")->required();

  BenchArgs bm;
  auto* bench = app.add_subcommand("bench-memory", "Dense vs compressed memory readout cost");
  bench->add_option("--tokens", bm.tokens, "Memory token counts");
  bench->add_option("--k", bm.k, "Latents");
  bench->add_option("--c", bm.c, "Channels");
  bench->add_option("--dk", bm.dk, "Key width");
  bench->add_option("--queries", bm.queries, "Query rows");
  bench->add_option("--repeats", bm.repeats, "Timed runs per row");
  bench->add_option("--seed", bm.seed, "Data seed");
  bench->add_option("--out", bm.out, "CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitArgs;
  }

  RunManifest m;
  std::function<void()> body;
  if (gen->parsed()) {
    m = {"gen-data", gd.config, gd.seed};
    m.dir = gd.out;
    body = [&] { gen_data(gd, m); };
  } else if (trn->parsed()) {
    m = {"train", tr.config, 42};
    m.dir = tr.out;
    body = [&] { train(tr, m); };
  } else if (evl->parsed()) {
    m = {"eval", "", ev.seed};
    m.dir = fs::path(ev.out).parent_path();
    if (m.dir.empty()) m.dir = ".";
    body = [&] { evaluate(ev, m); };
  } else {
    m = {"bench-memory", "", bm.seed};
    m.dir = bm.out.empty() ? fs::path() : fs::path(bm.out).parent_path();
    if (!bm.out.empty() && m.dir.empty()) m.dir = ".";
    body = [&] { bench_memory(bm, m); };
  }
  m.started = timestamp();

  int code = kExitOk;
  std::string message;
  try {
    body();
  } catch (const Error& e) {
    code = exit_code_for(e.kind());
    message = e.what();
  } catch (const fs::filesystem_error& e) {
    code = kExitRuntime;
    message = e.what();
  } catch (const nlohmann::json::exception& e) {
    code = kExitArgs;
    message = e.what();
  } catch (const std::exception& e) {
    code = kExitRuntime;
    message = e.what();
  }
  m.write(code, message);
  if (code != kExitOk) std::cerr << "esam3 " << m.command << ": " << message << "\n";
  return code;
}
