#include "tumorforge/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "tumorforge/core_data.hpp"
#include "tumorforge/errors.hpp"
#include "tumorforge/evaluation.hpp"
#include "tumorforge/experiment.hpp"
#include "tumorforge/phantom.hpp"
#include "tumorforge/synthesis.hpp"
#include "tumorforge/training.hpp"

namespace tumorforge {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(ValueSource source) {
  switch (source) {
    case ValueSource::kFlag: return "flag";
    case ValueSource::kConfig: return "config";
    case ValueSource::kEnv: return "env";
    case ValueSource::kDefault: return "default";
  }
  return "unknown";
}

namespace {

struct OptionSpec {
  std::string name;
  std::optional<std::string> fallback;  // built-in default
  bool required = false;
  std::string help;
};

struct CommandSpec {
  std::string name;
  std::string summary;
  std::vector<OptionSpec> options;
};

std::vector<OptionSpec> common(bool out_required) {
  return {{"config", std::nullopt, false, "flat `key = value` config file"},
          {"seed", "0", false, "random seed"},
          {"out", std::nullopt, out_required, "output directory"}};
}

std::vector<OptionSpec> training_options(const std::string& learning_rate) {
  return {{"data", std::nullopt, true, "dataset directory (default: $TUMORFORGE_DATA)"},
          {"learning_rate", learning_rate, false, "Adam learning rate"},
          {"epochs", "200", false, "training epochs"},
          {"batch_size", "8", false, "mini-batch size"},
          {"checkpoint_every", "10", false, "epochs between checkpoints (the final epoch is always saved)"},
          {"beta1", "0.9", false, "Adam beta1"},
          {"beta2", "0.999", false, "Adam beta2"},
          {"width", "0", false, "channel multiplier; 0 = (size/256)^1.5"},
          {"w_pix", "1.0", false, "pixel loss weight"},
          {"w_cont", "0.1", false, "content loss weight"},
          {"w_adv", "0.01", false, "adversarial loss weight"},
          {"reduction", "mean", false, "loss reduction: mean | sum"},
          {"feature_mode", "fixed_random", false, "content/FID features: fixed_random | pretrained"},
          {"feature_weights", "", false, "VGG-19 tensor archive for pretrained features"},
          {"feature_layer", "second_conv", false, "pretrained layer: second_conv | second_block"}};
}

std::vector<CommandSpec> build_schema() {
  auto with = [](std::vector<OptionSpec> a, const std::vector<OptionSpec>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  const std::vector<OptionSpec> features = {
      {"feature_mode", "fixed_random", false, "fixed_random | pretrained"},
      {"feature_weights", "", false, "VGG-19 tensor archive for pretrained features"},
      {"feature_layer", "second_conv", false, "second_conv | second_block"}};
  return {
      {"phantom-gen", "generate a raw phantom dataset",
       with(common(true), {{"size", "64", false, "slice size (pixels)"},
                           {"subjects", "40", false, "number of subjects"},
                           {"slices", "10", false, "slices per subject"},
                           {"tumor_probability", "0.5", false, "probability that a slice carries a tumor"}})},
      {"preprocess", "normalize every contrast of a dataset",
       with(common(true), {{"data", std::nullopt, true, "dataset directory (default: $TUMORFORGE_DATA)"}})},
      {"train-masks", "train G_binary and G_grade", with(common(true), training_options("0.001"))},
      {"train-inpaint", "train G_inpaint and D_inpaint", with(common(true), training_options("0.001"))},
      {"train-seg", "train the segmentation U-Net",
       with(common(true), with(training_options("0.0002"),
                               {{"augment", "", false, "synthesized dataset added to the training split"},
                                {"synth_ratio", "1.0", false, "synthesized records per real training record"}}))},
      {"synth", "synthesize tumor slices from normal slices",
       with(common(true), {{"models", std::nullopt, true, "directory with g_binary/g_grade/g_inpaint .tfck"},
                           {"normals", std::nullopt, true, "dataset whose tumor-free slices are used"},
                           {"n", "0", false, "number of images"},
                           {"circles", "", false, "fixed circles cx,cy,r1,r2,r3"},
                           {"max_attempts", "1000", false, "rejections allowed per image"}})},
      {"eval-fid", "FID between two datasets",
       with(common(false), with({{"set_a", std::nullopt, true, "first dataset directory"},
                                 {"set_b", std::nullopt, true, "second dataset directory"},
                                 {"shrinkage", "0", false, "covariance shrinkage weight"}},
                                features))},
      {"eval-seg", "score a segmentation checkpoint",
       with(common(false), {{"model", std::nullopt, true, "unet_seg checkpoint"},
                            {"data", std::nullopt, true, "dataset directory (default: $TUMORFORGE_DATA)"},
                            {"split", "test", false, "split to score (all records when absent)"},
                            {"method", "", false, "row label (default: checkpoint directory name)"}})},
      {"report", "collect seg_scores.csv files into one table",
       with(common(false), {{"experiment", std::nullopt, true, "directory searched for seg_scores.csv"}})},
  };
}

const std::vector<CommandSpec>& schema() {
  static const std::vector<CommandSpec> s = build_schema();
  return s;
}

const CommandSpec* find_command(const std::string& name) {
  for (const auto& c : schema()) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

const OptionSpec* find_option(const CommandSpec& cmd, const std::string& name) {
  for (const auto& o : cmd.options) {
    if (o.name == name) return &o;
  }
  return nullptr;
}

std::string canonical(std::string key) {
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw InvalidValue("--" + key + " expects a number, got '" + text + "'");
  }
  return value;
}

}  // namespace

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = options.find(key);
  if (it == options.end()) throw MissingRequired(key);
  return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const { return parse_number<std::int64_t>(key, get(key)); }

double RunConfig::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw InvalidValue("--" + key + " expects true/false, got '" + v + "'");
}

std::vector<std::string> command_names() {
  std::vector<std::string> names;
  for (const auto& c : schema()) names.push_back(c.name);
  return names;
}

std::string usage(const std::string& command) {
  std::ostringstream out;
  if (command.empty()) {
    out << "usage: tumorforge <command> [--option value ...]\n\ncommands:\n";
    for (const auto& c : schema()) out << "  " << c.name << std::string(16 - c.name.size(), ' ') << c.summary << "\n";
    out << "\n`tumorforge <command> --help` lists the options of a command.\n";
    return out.str();
  }
  const CommandSpec* cmd = find_command(command);
  if (!cmd) throw UnknownCommand(command);
  out << "usage: tumorforge " << cmd->name << " [options]\n" << cmd->summary << "\n\noptions:\n";
  for (const auto& o : cmd->options) {
    std::string flag = "--" + o.name;
    std::replace(flag.begin(), flag.end(), '_', '-');
    out << "  " << flag << std::string(flag.size() < 22 ? 22 - flag.size() : 1, ' ') << o.help;
    if (o.required) out << " (required)";
    else if (o.fallback && !o.fallback->empty()) out << " [" << *o.fallback << "]";
    out << "\n";
  }
  return out.str();
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOFailure("cannot read config file '" + path + "'");
  std::map<std::string, std::string> values;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string content = trim(line.substr(0, line.find('#')));
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw InvalidConfig(path + ":" + std::to_string(number) + ": expected `key = value`");
    }
    const std::string key = canonical(trim(content.substr(0, eq)));
    if (key.empty()) throw InvalidConfig(path + ":" + std::to_string(number) + ": empty key");
    values[key] = trim(content.substr(eq + 1));
  }
  return values;
}

RunConfig parse_args(const std::vector<std::string>& args, const EnvLookup& env) {
  if (args.empty()) throw UnknownCommand("(none)");
  const CommandSpec* cmd = find_command(args[0]);
  if (!cmd) throw UnknownCommand(args[0]);

  std::map<std::string, std::string> flags;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& token = args[i];
    if (token.rfind("--", 0) != 0 || token.size() == 2) throw UnknownOption(token);
    std::string name = token.substr(2);
    std::optional<std::string> value;
    if (const auto eq = name.find('='); eq != std::string::npos) {
      value = name.substr(eq + 1);
      name = name.substr(0, eq);
    }
    name = canonical(name);
    if (!find_option(*cmd, name)) throw UnknownOption(token);
    if (!value) {
      if (i + 1 >= args.size()) throw MissingRequired(name);
      value = args[++i];
    }
    flags[name] = *value;
  }

  std::map<std::string, std::string> file;
  if (flags.count("config")) {
    file = read_config_file(flags["config"]);
    if (const auto it = file.find("command"); it != file.end()) {
      if (it->second != cmd->name) {
        throw InvalidConfig("config file is for '" + it->second + "', not '" + cmd->name + "'");
      }
      file.erase(it);
    }
    file.erase("config");
    for (const auto& [key, value] : file) {
      if (!find_option(*cmd, key)) throw UnknownOption(key);
    }
  }

  RunConfig config;
  config.command = cmd->name;
  for (const auto& o : cmd->options) {
    if (const auto it = flags.find(o.name); it != flags.end()) {
      config.options[o.name] = it->second;
      config.sources[o.name] = ValueSource::kFlag;
    } else if (const auto jt = file.find(o.name); jt != file.end()) {
      config.options[o.name] = jt->second;
      config.sources[o.name] = ValueSource::kConfig;
    } else if (o.name == "data" && env) {
      if (auto v = env("TUMORFORGE_DATA"); v && !v->empty()) {
        config.options[o.name] = *v;
        config.sources[o.name] = ValueSource::kEnv;
      }
    }
    if (!config.options.count(o.name) && o.fallback) {
      config.options[o.name] = *o.fallback;
      config.sources[o.name] = ValueSource::kDefault;
    }
  }
  const std::int64_t seed = config.get_int("seed");
  if (seed < 0) throw InvalidValue("--seed must be >= 0");
  config.seed = static_cast<std::uint64_t>(seed);
  return config;
}

std::string format_run_manifest(const RunConfig& config) {
  std::ostringstream out;
  out << "# tumorforge run manifest\n";
  out << "command = " << config.command << "\n";
  for (const auto& [key, value] : config.options) {
    if (key == "config") continue;
    out << key << " = " << value;
    out << "  # " << to_string(config.sources.at(key)) << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Commands

namespace {

void require(const RunConfig& config) {
  const CommandSpec* cmd = find_command(config.command);
  if (!cmd) throw UnknownCommand(config.command);
  for (const auto& o : cmd->options) {
    if (o.required && (!config.has(o.name) || config.get(o.name).empty())) throw MissingRequired(o.name);
  }
}

fs::path prepare_out(const RunConfig& config) {
  const fs::path out = config.get("out");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IOFailure("cannot create " + out.string() + ": " + ec.message());
  std::ofstream(out / ("run_manifest." + config.command + ".txt")) << format_run_manifest(config);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IOFailure("cannot write " + path.string());
  f << text;
}

// Normalizes records that are still raw; inputs on disk are left untouched.
DatasetManifest load_normalized(const fs::path& dir) {
  DatasetManifest m = load_dataset(dir);
  for (auto& r : m.records) {
    if (!r.images.normalized()) r = preprocess_record(r);
  }
  return m;
}

FeatureExtractorOptions feature_options(const RunConfig& c) {
  FeatureExtractorOptions f;
  const std::string& mode = c.get("feature_mode");
  if (mode == "fixed_random") f.mode = FeatureMode::kFixedRandom;
  else if (mode == "pretrained") f.mode = FeatureMode::kPretrained;
  else throw InvalidValue("--feature-mode expects fixed_random or pretrained, got '" + mode + "'");
  const std::string& layer = c.get("feature_layer");
  if (layer == "second_conv") f.layer = FeatureLayer::kSecondConv;
  else if (layer == "second_block") f.layer = FeatureLayer::kSecondBlock;
  else throw InvalidValue("--feature-layer expects second_conv or second_block, got '" + layer + "'");
  f.weights = c.get("feature_weights");
  f.seed = c.seed;
  return f;
}

TrainConfig train_config(const RunConfig& c, const fs::path& out, std::ofstream& log) {
  TrainConfig t;
  t.learning_rate = c.get_double("learning_rate");
  t.epochs = static_cast<int>(c.get_int("epochs"));
  t.batch_size = static_cast<int>(c.get_int("batch_size"));
  t.checkpoint_every = static_cast<int>(c.get_int("checkpoint_every"));
  t.seed = c.seed;
  t.adam_betas = {c.get_double("beta1"), c.get_double("beta2")};
  t.width = c.get_double("width");
  t.loss_weights.w_pix = c.get_double("w_pix");
  t.loss_weights.w_cont = c.get_double("w_cont");
  t.loss_weights.w_adv = c.get_double("w_adv");
  const std::string& reduction = c.get("reduction");
  if (reduction == "mean") t.loss_weights.reduction = Reduction::kMean;
  else if (reduction == "sum") t.loss_weights.reduction = Reduction::kSum;
  else throw InvalidValue("--reduction expects mean or sum, got '" + reduction + "'");
  t.feature = feature_options(c);
  t.checkpoint_dir = out / "checkpoints";
  t.on_step = [&log](const StepLog& s) { log << s.to_line() << "\n"; };
  t.validate();
  return t;
}

json report_json(const TrainReport& r) {
  json j;
  j["train_loss"] = r.train_loss;
  j["val_loss"] = r.val_loss;
  j["initial_val_loss"] = r.initial_val_loss;
  j["chosen_epoch"] = r.chosen_epoch;
  j["terms"] = r.terms;
  json cps = json::array();
  for (const auto& c : r.checkpoints) cps.push_back({{"epoch", c.epoch}, {"validation_loss", c.validation_loss}});
  j["checkpoints"] = cps;
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

void finish_training(const fs::path& out, const std::string& name, const NetworkHandle& net, const TrainReport& r,
                     std::ostream& console) {
  save_checkpoint(net, out / (name + ".tfck"));
  write_text(out / ("report_" + name + ".json"), report_json(r).dump(2) + "\n");
  console << name << ": chosen epoch " << r.chosen_epoch << ", validation loss " << net.validation_loss << " ("
          << r.wall_seconds << " s)\n";
}

int cmd_phantom_gen(const RunConfig& c, std::ostream& out) {
  const fs::path dir = prepare_out(c);
  PhantomConfig p;
  p.size = static_cast<int>(c.get_int("size"));
  p.n_subjects = static_cast<int>(c.get_int("subjects"));
  p.slices_per_subject = static_cast<int>(c.get_int("slices"));
  p.tumor_probability = c.get_double("tumor_probability");
  p.seed = c.seed;
  const DatasetManifest m = generate_phantom(p);
  save_dataset(m, dir);
  out << "wrote " << m.records.size() << " phantom slices to " << dir.string() << "\n";
  return 0;
}

int cmd_preprocess(const RunConfig& c, std::ostream& out) {
  const DatasetManifest in = load_dataset(c.get("data"));
  const fs::path dir = prepare_out(c);
  const DatasetManifest m = preprocess_dataset(in);
  save_dataset(m, dir);
  out << "normalized " << m.records.size() << " slices into " << dir.string() << "\n";
  return 0;
}

int cmd_train_masks(const RunConfig& c, std::ostream& out) {
  const DatasetManifest data = load_normalized(c.get("data"));
  const fs::path dir = prepare_out(c);
  std::ofstream log(dir / ("train_log." + c.command + ".txt"));
  const TrainConfig t = train_config(c, dir, log);
  const TrainedNetwork binary = train_g_binary(data, t);
  finish_training(dir, "g_binary", binary.network, binary.report, out);
  const TrainedNetwork grade = train_g_grade(data, t);
  finish_training(dir, "g_grade", grade.network, grade.report, out);
  return 0;
}

int cmd_train_inpaint(const RunConfig& c, std::ostream& out) {
  const DatasetManifest data = load_normalized(c.get("data"));
  const fs::path dir = prepare_out(c);
  std::ofstream log(dir / ("train_log." + c.command + ".txt"));
  const TrainConfig t = train_config(c, dir, log);
  const TrainedInpaint r = train_inpaint(data, t);
  finish_training(dir, "g_inpaint", r.generator, r.report, out);
  save_checkpoint(r.discriminator, dir / "d_inpaint.tfck");
  return 0;
}

int cmd_train_seg(const RunConfig& c, std::ostream& out) {
  DatasetManifest data = load_normalized(c.get("data"));
  if (!c.get("augment").empty()) {
    data = augmented_manifest(data, load_normalized(c.get("augment")), c.get_double("synth_ratio"));
  }
  const fs::path dir = prepare_out(c);
  std::ofstream log(dir / ("train_log." + c.command + ".txt"));
  const TrainConfig t = train_config(c, dir, log);
  const TrainedNetwork r = train_segmentation(data, t);
  finish_training(dir, "unet_seg", r.network, r.report, out);
  return 0;
}

ConcentricCircles parse_circles(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) v.push_back(parse_number<double>("circles", trim(cell)));
  if (v.size() != 5) throw InvalidValue("--circles expects cx,cy,r1,r2,r3");
  ConcentricCircles circles{v[0], v[1], v[2], v[3], v[4]};
  if (!(circles.r1 >= circles.r2 && circles.r2 >= circles.r3 && circles.r3 >= 0.0)) {
    throw InvalidValue("--circles radii must satisfy r1 >= r2 >= r3 >= 0");
  }
  return circles;
}

int cmd_synth(const RunConfig& c, std::ostream& out) {
  const ModelBundle models = load_models(c.get("models"));
  const DatasetManifest normals = load_normalized(c.get("normals"));
  if (normals.records.empty()) throw EmptyDataset("no normal slices in " + c.get("normals"));
  const fs::path dir = prepare_out(c);
  SynthesisConfig s = SynthesisConfig::for_size(normals.records.front().images.height());
  s.n_images = static_cast<int>(c.get_int("n"));
  s.seed = c.seed;
  s.max_attempts_per_image = static_cast<int>(c.get_int("max_attempts"));
  if (!c.get("circles").empty()) s.circles = parse_circles(c.get("circles"));
  const DatasetManifest m = synthesize_batch(normals, s, models);
  save_dataset(m, dir);
  out << "synthesized " << m.records.size() << " slices into " << dir.string() << "\n";
  return 0;
}

int cmd_eval_fid(const RunConfig& c, std::ostream& out) {
  const DatasetManifest a = load_normalized(c.get("set_a"));
  const DatasetManifest b = load_normalized(c.get("set_b"));
  std::vector<const SliceRecord*> ra, rb;
  for (const auto& r : a.records) ra.push_back(&r);
  for (const auto& r : b.records) rb.push_back(&r);
  FidOptions options;
  options.shrinkage = c.get_double("shrinkage");
  const double value = fid_between(ra, rb, feature_options(c), options);
  std::ostringstream line;
  line.precision(10);
  line << "fid = " << value << "\n";
  out << line.str();
  if (c.has("out")) write_text(prepare_out(c) / "fid.txt", line.str());
  return 0;
}

int cmd_eval_seg(const RunConfig& c, std::ostream& out) {
  const fs::path model_path = c.get("model");
  const NetworkHandle net = load_checkpoint(model_path);
  if (net.kind != NetworkKind::kUNetSeg) {
    throw InvalidValue("--model must be a unet_seg checkpoint, got " + std::string(to_string(net.kind)));
  }
  const DatasetManifest data = load_normalized(c.get("data"));
  const auto records = split_records(data, c.get("split"), false);
  if (records.empty()) throw EmptyDataset("nothing to score in split '" + c.get("split") + "'");
  std::string method = c.get("method");
  if (method.empty()) method = fs::absolute(model_path).parent_path().filename().string();
  const SegEvaluation e = evaluate_segmentation(net, records);
  const std::vector<ExperimentRow> rows{{method, e.scores}};
  out << format_table(rows);
  if (c.has("out")) write_text(prepare_out(c) / "seg_scores.csv", format_csv(rows));
  return 0;
}

int cmd_report(const RunConfig& c, std::ostream& out) {
  const fs::path root = c.get("experiment");
  if (!fs::is_directory(root)) throw IOFailure("no experiment directory " + root.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().filename() == "seg_scores.csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw EmptyDataset("no seg_scores.csv under " + root.string());
  std::vector<ExperimentRow> rows;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::stringstream text;
    text << in.rdbuf();
    for (auto& row : parse_csv(text.str())) rows.push_back(std::move(row));
  }
  const std::string table = format_table(rows);
  out << table;
  if (c.has("out")) {
    const fs::path dir = prepare_out(c);
    write_text(dir / "table.txt", table);
    write_text(dir / "table.csv", format_csv(rows));
  }
  return 0;
}

}  // namespace

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    require(config);
    torch::set_num_threads(1);
    const std::string& cmd = config.command;
    if (cmd == "phantom-gen") return cmd_phantom_gen(config, out);
    if (cmd == "preprocess") return cmd_preprocess(config, out);
    if (cmd == "train-masks") return cmd_train_masks(config, out);
    if (cmd == "train-inpaint") return cmd_train_inpaint(config, out);
    if (cmd == "train-seg") return cmd_train_seg(config, out);
    if (cmd == "synth") return cmd_synth(config, out);
    if (cmd == "eval-fid") return cmd_eval_fid(config, out);
    if (cmd == "eval-seg") return cmd_eval_seg(config, out);
    if (cmd == "report") return cmd_report(config, out);
    throw UnknownCommand(cmd);
  } catch (const Error& e) {
    err << "error: " << e.name() << ": " << e.detail() << "\n";
    return e.exit_code();
  } catch (const c10::Error& e) {
    err << "error: TensorError: " << e.what_without_backtrace() << "\n";
    return static_cast<int>(ErrorClass::kNumeric);
  } catch (const fs::filesystem_error& e) {
    err << "error: IOFailure: " << e.what() << "\n";
    return static_cast<int>(ErrorClass::kData);
  }
}

int main_entry(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty()) {
    err << usage();
    return static_cast<int>(ErrorClass::kUsage);
  }
  if (args[0] == "--help" || args[0] == "help") {
    out << usage();
    return 0;
  }
  if (args.size() >= 2 && (args[1] == "--help")) {
    try {
      out << usage(args[0]);
      return 0;
    } catch (const Error& e) {
      err << "error: " << e.name() << ": " << e.detail() << "\n";
      return e.exit_code();
    }
  }
  RunConfig config;
  try {
    config = parse_args(args, [](const std::string& name) -> std::optional<std::string> {
      const char* v = std::getenv(name.c_str());
      return v ? std::optional<std::string>(v) : std::nullopt;
    });
  } catch (const Error& e) {
    err << "error: " << e.name() << ": " << e.detail() << "\n";
    return e.exit_code();
  }
  return run(config, out, err);
}

}  // namespace tumorforge
