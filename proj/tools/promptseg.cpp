#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "promptseg/datasets.hpp"
#include "promptseg/error.hpp"
#include "promptseg/evalharness.hpp"
#include "promptseg/pipeline.hpp"
#include "promptseg/service.hpp"
#include "promptseg/training.hpp"
#include "promptseg/visual_prompts.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace promptseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitHandled = 1;
constexpr int kExitUsage = 2;

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

std::vector<std::string> suggestions(const std::string& word, const std::vector<std::string>& candidates) {
  std::vector<std::pair<std::size_t, std::string>> scored;
  const std::size_t limit = std::max<std::size_t>(2, word.size() / 3);
  for (const auto& c : candidates) {
    const auto d = edit_distance(word, c);
    if (d <= limit || (!word.empty() && c.starts_with(word))) scored.emplace_back(d, c);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < scored.size() && i < 3; ++i) out.push_back(scored[i].second);
  return out;
}

std::vector<std::string> option_names(const CLI::App& app) {
  std::vector<std::string> names;
  for (const CLI::Option* o : app.get_options()) {
    for (const auto& l : o->get_lnames()) names.push_back("--" + l);
    for (const auto& s : o->get_snames()) names.push_back("-" + s);
  }
  return names;
}

void print_hint(const std::string& word, const std::vector<std::string>& candidates) {
  const auto hints = suggestions(word, candidates);
  if (hints.empty()) return;
  std::cerr << "  did you mean";
  for (std::size_t i = 0; i < hints.size(); ++i) std::cerr << (i ? ", " : " ") << hints[i];
  std::cerr << "?\n";
}

// Unknown subcommands and flags are reported before CLI11 complains about
// missing required options, so the suggestion reaches the user.
bool check_unknown_arguments(const CLI::App& app, int argc, char** argv) {
  const CLI::App* active = &app;
  std::vector<std::string> subcommands;
  for (const CLI::App* sub : app.get_subcommands({})) subcommands.push_back(sub->get_name());
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--") break;
    if (active == &app && !arg.starts_with("-")) {
      if (std::find(subcommands.begin(), subcommands.end(), arg) == subcommands.end()) {
        std::cerr << "error: unknown subcommand '" << arg << "'\n";
        print_hint(arg, subcommands);
        return false;
      }
      active = app.get_subcommand(arg);
      continue;
    }
    if (!arg.starts_with("--")) continue;
    const std::string name = arg.substr(0, arg.find('='));
    auto names = option_names(*active);
    const auto root_names = option_names(app);
    names.insert(names.end(), root_names.begin(), root_names.end());
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      std::cerr << "error: unknown option '" << name << "'"
                << (active == &app ? "" : " for '" + active->get_name() + "'") << '\n';
      print_hint(name, names);
      return false;
    }
  }
  return true;
}

std::vector<std::string> split_list(const std::string& text, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

void write_json(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  out << j.dump(2) << '\n';
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::optional<int> iterations;
  std::string checkpoint;
  std::string loss_curve;
};

int run_train(const TrainArgs& a) {
  auto job = training::load_train_job(a.config);
  if (a.iterations) job.train.iterations = *a.iterations;
  if (!a.checkpoint.empty()) job.checkpoint = a.checkpoint;
  if (!a.loss_curve.empty()) job.loss_curve = a.loss_curve;
  job.train.validate();
  const auto result = training::run_train_job(job);
  if (result.backbone_checksum_before != result.backbone_checksum_after) {
    throw NumericError("backbone parameters changed during training");
  }
  std::cout << json{{"checkpoint", job.checkpoint},
                    {"loss_curve", job.loss_curve},
                    {"steps", result.curve.size()},
                    {"final_loss", result.curve.empty() ? 0.0 : result.curve.back().loss}}
                   .dump()
            << '\n';
  return kExitOk;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string protocol;
  std::string checkpoint;
  std::string data;
  std::string out;
  double threshold = 0.5;
  unsigned workers = 0;
  std::string prompt_template = "{}";
  std::string breakdown;
  std::string unseen;
  std::string classes;
  std::string mapping;
  std::string recipe = prompts::RecipeRegistry::kBestRecipe;
  bool use_text = false;
};

std::set<std::string> resolve_unseen(const std::string& spec) {
  if (spec.starts_with("unseen-")) {
    const auto splits = read_json_file(datasets::default_data_dir() / "pascal_splits.json");
    const auto& table = splits.at("zero_shot_unseen");
    if (!table.contains(spec)) throw InputError("unknown split '" + spec + "'");
    return table.at(spec).get<std::set<std::string>>();
  }
  const auto list = split_list(spec);
  return {list.begin(), list.end()};
}

json with_breakdown(json report, const std::vector<eval::SampleResult>& samples, const std::string& key) {
  if (key.empty()) return report;
  json groups = json::array();
  for (const auto& g : eval::breakdown(samples, eval::breakdown_key_from_string(key))) {
    groups.push_back({{"key", g.key}, {"count", g.count}, {"mIoU", g.mean_iou_fg}});
  }
  report["breakdown"] = {{"by", key}, {"groups", groups}};
  return report;
}

int run_eval(const EvalArgs& a) {
  const auto model = load_model(a.checkpoint);
  const Segmenter& seg = *model.segmenter;
  json report;
  if (a.protocol == "referring") {
    const auto records = datasets::load_records(a.data);
    const auto r = eval::eval_referring(seg, records, a.threshold, a.prompt_template, a.workers);
    report = with_breakdown(r.to_json(), r.samples, a.breakdown);
  } else if (a.protocol == "zeroshot") {
    const auto images = datasets::load_annotated(a.data);
    std::vector<std::string> classes = split_list(a.classes);
    if (classes.empty()) {
      std::set<std::string> seen;
      for (const auto& img : images)
        for (const auto& [category, mask] : img.objects) seen.insert(category);
      classes.assign(seen.begin(), seen.end());
    }
    if (a.unseen.empty()) throw InputError("zeroshot needs --unseen (class list or a named split such as unseen-4)");
    const auto unseen = resolve_unseen(a.unseen);
    report = eval::eval_zero_shot_multilabel(seg, images, classes, unseen, a.threshold, {}, a.workers).to_json();
  } else if (a.protocol == "oneshot") {
    auto records = datasets::load_records(a.data);
    const bool has_supports = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.support.has_value(); });
    if (!has_supports) {
      std::mt19937_64 rng(1);
      records = datasets::build_phrasecut_plus(records, 0.0, rng);
    }
    const auto episodes = eval::episodes_from_records(records);
    const auto r = eval::eval_one_shot(seg, episodes, a.recipe, a.threshold, a.use_text, a.workers);
    report = with_breakdown(r.to_json(), r.samples, a.breakdown);
  } else if (a.protocol == "generalized") {
    const auto images = datasets::load_annotated(a.data);
    const fs::path mapping_path = a.mapping.empty() ? datasets::default_data_dir() / "affordance_mapping.json" : fs::path(a.mapping);
    const auto mapping = datasets::load_affordance_mapping(mapping_path);
    std::set<std::string> vocabulary;
    for (const auto& img : images)
      for (const auto& [category, mask] : img.objects) vocabulary.insert(category);
    if (a.data.starts_with("synth:")) {
      const datasets::SynthOptions synth;
      for (const auto& color : synth.colors)
        for (const auto& shape : synth.shapes) vocabulary.insert(color + " " + shape);
    }
    const auto subsets = datasets::affordance_subsets(images, mapping, vocabulary);
    report = {{"rows", eval::to_json(eval::eval_generalized(seg, subsets, mapping.group_of, a.threshold, a.workers))}};
  } else {
    throw InputError("unknown protocol '" + a.protocol + "'");
  }
  report["protocol"] = a.protocol;
  report["checkpoint"] = a.checkpoint;
  report["model_hash"] = model.model_hash;
  write_json(report, a.out);
  return kExitOk;
}

// --- predict ---------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  std::string image;
  std::string text;
  std::string support_image;
  std::string support_mask;
  std::string recipe = prompts::RecipeRegistry::kBestRecipe;
  std::optional<double> a;
  double threshold = 0.5;
  std::string out;
  std::string prob_out;
};

int run_predict(const PredictArgs& p) {
  if (p.support_image.empty() != p.support_mask.empty()) {
    throw InputError("--support-image and --support-mask go together");
  }
  if (p.text.empty() && p.support_image.empty()) throw InputError("give --text or --support-image/--support-mask");
  const auto model = load_model(p.checkpoint);
  const Image image = load_image(p.image);
  conditioning::PromptSpec spec;
  if (!p.support_image.empty()) {
    Image simg = load_image(p.support_image);
    Mask smask = load_mask(p.support_mask);
    spec = p.text.empty() ? conditioning::PromptSpec::from_support(std::move(simg), std::move(smask), p.recipe)
                          : conditioning::PromptSpec::interpolated(p.text, std::move(simg), std::move(smask),
                                                                   p.a.value_or(0.5), p.recipe);
  } else {
    spec = conditioning::PromptSpec::from_text(p.text);
  }
  const MatrixD prob = model.segmenter->probabilities(image, spec);
  std::vector<std::uint16_t> q(static_cast<std::size_t>(prob.size()));
  for (Eigen::Index i = 0; i < prob.size(); ++i) q[static_cast<std::size_t>(i)] = quantize16(prob.data()[i]);
  const Mask mask = threshold_quantized(q, image.width, image.height, p.threshold);
  for (const auto& path : {p.out, p.prob_out}) {
    if (const auto parent = fs::path(path).parent_path(); !path.empty() && !parent.empty()) fs::create_directories(parent);
  }
  save_mask(mask, p.out);
  if (!p.prob_out.empty()) {
    const auto png = encode_png16(std::span<const double>(prob.data(), static_cast<std::size_t>(prob.size())),
                                  image.width, image.height);
    std::ofstream out(p.prob_out, std::ios::binary);
    out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
  }
  std::cout << json{{"out", p.out}, {"prompt", spec.summary()}, {"foreground_pixels", mask.count()}, {"threshold", p.threshold}}
                   .dump()
            << '\n';
  return kExitOk;
}

// --- build-dataset ---------------------------------------------------------

struct BuildArgs {
  std::string source;
  std::string out;
  std::string pixels;
  double q_neg = 0.2;
  std::uint64_t seed = 1;
  std::string remove;
  std::string hyponyms;
  std::string crop;  // "<w>x<h>" or "<side>"
  bool annotated = false;
};

std::pair<int, int> parse_crop_size(const std::string& text) {
  const auto x = text.find('x');
  try {
    std::size_t used = 0;
    const int w = std::stoi(text.substr(0, x), &used);
    if (used != (x == std::string::npos ? text.size() : x)) throw std::invalid_argument(text);
    const int h = x == std::string::npos ? w : std::stoi(text.substr(x + 1), &used);
    if (x != std::string::npos && used != text.size() - x - 1) throw std::invalid_argument(text);
    if (w <= 0 || h <= 0) throw std::invalid_argument(text);
    return {w, h};
  } catch (const std::logic_error&) {
    throw InputError("--crop expects <w>x<h> or <side>, got '" + text + "'");
  }
}

int run_build(const BuildArgs& b) {
  const fs::path out(b.out);
  const fs::path pixels = b.pixels.empty() ? out.parent_path() / "pixels" : fs::path(b.pixels);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  if (b.annotated) {
    const auto images = datasets::load_annotated(b.source);
    datasets::write_annotated_jsonl(images, out, pixels);
    std::cout << json{{"out", b.out}, {"images", images.size()}}.dump() << '\n';
    return kExitOk;
  }
  auto records = datasets::load_records(b.source);
  std::size_t removed = 0;
  if (!b.remove.empty()) {
    const fs::path hyp = b.hyponyms.empty() ? datasets::default_data_dir() / "pascal_hyponyms.json" : fs::path(b.hyponyms);
    std::vector<std::string> seeds;
    for (const auto& s : split_list(b.remove)) {
      if (s.starts_with("unseen-")) {
        const auto u = resolve_unseen(s);
        seeds.insert(seeds.end(), u.begin(), u.end());
      } else {
        seeds.push_back(s);
      }
    }
    const auto removal = datasets::ClassRemovalList::from_hyponyms(seeds, datasets::load_hyponyms(hyp));
    const auto before = records.size();
    records = datasets::filter_unseen_classes(records, removal);
    removed = before - records.size();
  }
  std::mt19937_64 rng(b.seed);
  if (!b.crop.empty()) {
    const auto [w, h] = parse_crop_size(b.crop);
    records = datasets::crop_records(records, w, h, rng);
  }
  records = datasets::build_phrasecut_plus(records, b.q_neg, rng);
  datasets::materialize(records, pixels);
  datasets::write_jsonl(records, out);
  const auto negatives = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.negative; });
  const auto supported = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.support.has_value(); });
  std::cout << json{{"out", b.out}, {"records", records.size()}, {"negatives", negatives},
                    {"with_support", supported}, {"removed", removed}}
                   .dump()
            << '\n';
  return kExitOk;
}

// --- prompt-bench ----------------------------------------------------------

struct BenchArgs {
  std::string samples;
  std::string recipes = "all";
  std::string out;
  std::string backbone = "stand-in";
  std::string weights;
  std::string bpe;
  unsigned workers = 0;
  int output_size = 224;
};

int run_bench(const BenchArgs& b) {
  const auto cfg = training::backbone_config_for(b.backbone, b.weights, b.bpe);
  const backbone::Backbone model(cfg);
  const auto samples = datasets::load_prompt_samples(b.samples);
  if (samples.empty()) throw InputError("no samples in " + b.samples);
  const auto registry = prompts::RecipeRegistry::standard();
  const auto ids = b.recipes == "all" ? registry.ids() : split_list(b.recipes);
  prompts::CompositionOptions options;
  options.output_size = b.output_size;
  const auto table = prompts::run_prompt_benchmark(model, samples, ids, registry, options, b.workers);
  if (b.out.empty() || b.out == "-") {
    table.write_csv(std::cout);
  } else {
    std::ofstream out(b.out);
    if (!out) throw InputError("cannot write " + b.out);
    table.write_csv(out);
  }
  std::cerr << table.pretty();
  return kExitOk;
}

// --- serve -----------------------------------------------------------------

struct ServeArgs {
  std::string config;
  std::string checkpoint;
  std::string host;
  std::optional<int> port;
  std::optional<unsigned> workers;
};

int run_serve(const ServeArgs& s) {
  auto cfg = service::load_service_config(s.config.empty() ? std::nullopt : std::optional<fs::path>(s.config));
  if (!s.checkpoint.empty()) cfg.checkpoint = s.checkpoint;
  if (!s.host.empty()) cfg.host = s.host;
  if (s.port) cfg.port = *s.port;
  if (s.workers) cfg.workers = *s.workers;
  if (cfg.checkpoint.empty()) throw ConfigError("no checkpoint: pass --checkpoint or set PROMPTSEG_CHECKPOINT");
  const auto model = load_model(cfg.checkpoint);
  service::Service svc(*model.segmenter, model.model_hash, cfg);
  if (!svc.serve()) throw ConfigError("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("promptseg"));
  CLI::App app{"Prompt-conditioned binary segmentation"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a decoder from a YAML job file");
  train_cmd->add_option("--config", train.config, "Job YAML")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--iterations", train.iterations, "Override train.iterations");
  train_cmd->add_option("--checkpoint", train.checkpoint, "Override output.checkpoint");
  train_cmd->add_option("--loss-curve", train.loss_curve, "Override output.loss_curve");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint under one protocol");
  eval_cmd->add_option("--protocol", ev.protocol)
      ->required()
      ->check(CLI::IsMember({"referring", "zeroshot", "oneshot", "generalized"}));
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "JSONL index or synth:<seed>:<n>")->required();
  eval_cmd->add_option("--out", ev.out, "Report JSON (stdout when omitted)");
  eval_cmd->add_option("--threshold", ev.threshold)->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--workers", ev.workers, "0: all cores");
  eval_cmd->add_option("--template", ev.prompt_template, "Prompt template, {} marks the phrase");
  eval_cmd->add_option("--breakdown", ev.breakdown, "size | template | class");
  eval_cmd->add_option("--unseen", ev.unseen, "Unseen classes: comma list or unseen-<k>");
  eval_cmd->add_option("--classes", ev.classes, "Comma list; default: every category in the data");
  eval_cmd->add_option("--mapping", ev.mapping, "Prompt to category mapping JSON");
  eval_cmd->add_option("--recipe", ev.recipe, "Visual prompt recipe for oneshot");
  eval_cmd->add_flag("--use-text", ev.use_text, "oneshot: condition on the class name instead of the support");

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Segment one image");
  predict_cmd->add_option("--checkpoint", pr.checkpoint)->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--image", pr.image)->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--text", pr.text);
  predict_cmd->add_option("--support-image", pr.support_image)->check(CLI::ExistingFile);
  predict_cmd->add_option("--support-mask", pr.support_mask)->check(CLI::ExistingFile);
  predict_cmd->add_option("--recipe", pr.recipe);
  predict_cmd->add_option("--a", pr.a, "Interpolation weight, 1 = support only")->check(CLI::Range(0.0, 1.0));
  predict_cmd->add_option("--threshold", pr.threshold)->check(CLI::Range(0.0, 1.0));
  predict_cmd->add_option("--out", pr.out, "Mask PNG")->required();
  predict_cmd->add_option("--prob-out", pr.prob_out, "16-bit probability PNG");

  BuildArgs bd;
  auto* build_cmd = app.add_subcommand("build-dataset", "Add supports and negatives, write a JSONL index");
  build_cmd->add_option("--source", bd.source, "JSONL index or synth:<seed>:<n>")->required();
  build_cmd->add_option("--out", bd.out, "Output index")->required();
  build_cmd->add_option("--pixels", bd.pixels, "Directory for materialized PNGs");
  build_cmd->add_option("--q-neg", bd.q_neg)->check(CLI::Range(0.0, 0.999999));
  build_cmd->add_option("--seed", bd.seed);
  build_cmd->add_option("--remove", bd.remove, "Classes to filter out (comma list or unseen-<k>)");
  build_cmd->add_option("--hyponyms", bd.hyponyms, "Hyponym table JSON");
  build_cmd->add_option("--crop", bd.crop, "Object-aware random crop, <w>x<h> or <side>");
  build_cmd->add_flag("--annotated", bd.annotated, "Write an annotated-image index instead");

  BenchArgs bn;
  auto* bench_cmd = app.add_subcommand("prompt-bench", "Score visual prompt recipes by alignment shift");
  bench_cmd->add_option("--samples", bn.samples, "JSONL {image, mask, target, distractors} or synth:<seed>:<n>")
      ->required();
  bench_cmd->add_option("--recipes", bn.recipes, "all or a comma list of recipe ids");
  bench_cmd->add_option("--out", bn.out, "CSV (stdout when omitted)");
  bench_cmd->add_option("--backbone", bn.backbone)->check(CLI::IsMember({"stand-in", "tiny", "imagenet-stand-in", "pretrained"}));
  bench_cmd->add_option("--weights", bn.weights);
  bench_cmd->add_option("--bpe", bn.bpe);
  bench_cmd->add_option("--workers", bn.workers);
  bench_cmd->add_option("--output-size", bn.output_size)->check(CLI::PositiveNumber);

  ServeArgs sv;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP inference service");
  serve_cmd->add_option("--config", sv.config, "Service YAML")->check(CLI::ExistingFile);
  serve_cmd->add_option("--checkpoint", sv.checkpoint);
  serve_cmd->add_option("--host", sv.host);
  serve_cmd->add_option("--port", sv.port)->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--workers", sv.workers);

  if (!check_unknown_arguments(app, argc, argv)) {
    std::cerr << "run with --help for usage\n";
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\nrun with --help for usage\n";
    return kExitUsage;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*train_cmd) return run_train(train);
    if (*eval_cmd) return run_eval(ev);
    if (*predict_cmd) return run_predict(pr);
    if (*build_cmd) return run_build(bd);
    if (*bench_cmd) return run_bench(bn);
    if (*serve_cmd) return run_serve(sv);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kExitHandled;
  } catch (const std::exception& e) {
    spdlog::error("unexpected: {}", e.what());
    return kExitHandled;
  }
  return kExitUsage;
}
