#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dentnet/augment.hpp"
#include "dentnet/cae.hpp"
#include "dentnet/checkpoint.hpp"
#include "dentnet/damage_cnn.hpp"
#include "dentnet/dataset.hpp"
#include "dentnet/ensemble.hpp"
#include "dentnet/features.hpp"
#include "dentnet/image_io.hpp"
#include "dentnet/linear_head.hpp"
#include "dentnet/localize.hpp"
#include "dentnet/metrics.hpp"
#include "dentnet/parallel.hpp"
#include "dentnet/synth.hpp"

namespace dentnet {

// Config or usage problems exit 2; failures during a valid run exit 1.
struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OptionSpec {
  std::string key;
  std::string type;  // int | uint | float | string | bool
  std::string def;   // default literal; ignored when required
  bool required = false;
  std::string help;
};

struct SubcommandSpec {
  std::string name;
  std::string help;
  std::vector<OptionSpec> options;
};

inline const std::vector<SubcommandSpec>& cli_schema() {
  static const std::vector<OptionSpec> universal = {
      {"config", "string", "", false, "JSON file of key/value settings; flags win"},
      {"threads", "uint", "1", false, "worker cap for parallel stages"},
  };
  auto with_universal = [](std::vector<OptionSpec> opts) {
    for (const auto& u : universal) opts.push_back(u);
    return opts;
  };
  static const std::vector<SubcommandSpec> schema = {
      {"synth", "generate the procedural damage corpus",
       with_universal({
           {"out", "string", "", true, "corpus directory to create"},
           {"n", "uint", "50", false, "images per class"},
           {"size", "uint", "64", false, "image side in pixels (>= 32)"},
           {"seed", "uint", "7", false, "master seed"},
       })},
      {"split", "assign train/test splits in a corpus manifest",
       with_universal({
           {"in", "string", "", true, "corpus root holding manifest.tsv"},
           {"frac", "float", "0.8", false, "train fraction in (0,1)"},
           {"seed", "uint", "1", false, "shuffle seed"},
           {"out", "string", "", false, "manifest output path; default in/manifest.tsv"},
       })},
      {"augment", "top classes up to target counts with rotate/flip copies",
       with_universal({
           {"in", "string", "", true, "source corpus root"},
           {"out", "string", "", true, "augmented corpus root to create"},
           {"counts", "string", "", true, "JSON file: class name -> target count"},
           {"split", "string", "train", false, "split to top up; empty = all entries"},
           {"rot.min", "float", "-20", false, "rotation lower bound, degrees"},
           {"rot.max", "float", "20", false, "rotation upper bound, degrees"},
           {"flip.prob", "float", "0.5", false, "horizontal flip probability"},
           {"seed", "uint", "1", false, "augmentation seed"},
       })},
      {"train-cnn", "train the convolutional classifier from random init",
       with_universal({
           {"in", "string", "", true, "corpus root with split manifest"},
           {"out", "string", "", true, "checkpoint path to write"},
           {"split", "string", "train", false, "training split"},
           {"eval.split", "string", "", false, "per-epoch evaluation split; empty = none"},
           {"stop.acc", "float", "2", false, "stop once eval accuracy reaches this"},
           {"history.out", "string", "", false, "per-epoch history TSV path"},
           {"preds.out", "string", "", false, "eval-split prediction TSV; needs --eval.split"},
           {"labels.out", "string", "", false, "eval-split true-label TSV; needs --eval.split"},
           {"cnn.blocks", "uint", "4", false, "conv+pool blocks"},
           {"cnn.filters", "uint", "16", false, "filters per conv"},
           {"cnn.kernel", "uint", "5", false, "conv kernel size"},
           {"cnn.fc", "uint", "128", false, "hidden units in the fc layer"},
           {"cnn.dropout.conv", "float", "0.25", false, "dropout after each pool; 0 disables"},
           {"cnn.dropout.fc", "float", "0.5", false, "dropout after the fc layer; 0 disables"},
           {"train.lr", "float", "0.01", false, "learning rate"},
           {"train.momentum", "float", "0.9", false, "momentum coefficient"},
           {"train.batch", "uint", "32", false, "minibatch size"},
           {"train.epochs", "uint", "10", false, "training epochs"},
           {"seed", "uint", "1", false, "seed for init, shuffling and dropout"},
       })},
      {"pretrain-cae", "layerwise autoencoder pretraining of the conv stages",
       with_universal({
           {"in", "string", "", true, "corpus root with split manifest"},
           {"out", "string", "", true, "directory for stage checkpoints"},
           {"stage", "int", "-1", false, "stage index to train; -1 = all in order"},
           {"split", "string", "train", false, "unlabeled image split"},
           {"cnn.blocks", "uint", "4", false, "conv+pool blocks"},
           {"cnn.filters", "uint", "16", false, "filters per conv"},
           {"cnn.kernel", "uint", "5", false, "conv kernel size"},
           {"cnn.fc", "uint", "128", false, "hidden units in the fc layer"},
           {"cae.lr", "float", "0.01", false, "pretraining learning rate"},
           {"cae.finetune.lr", "float", "0.001", false, "fine-tuning rate; must stay below cae.lr"},
           {"cae.momentum", "float", "0.9", false, "momentum coefficient"},
           {"cae.epochs", "uint", "5", false, "epochs per stage"},
           {"cae.batch", "uint", "32", false, "minibatch size"},
           {"seed", "uint", "1", false, "init and shuffle seed"},
       })},
      {"finetune", "assemble pretrained stages and fine-tune the classifier",
       with_universal({
           {"in", "string", "", true, "corpus root with split manifest"},
           {"stages", "string", "", true, "directory holding stage_<i>.dnet"},
           {"out", "string", "", true, "checkpoint path to write"},
           {"split", "string", "train", false, "training split"},
           {"eval.split", "string", "", false, "per-epoch evaluation split; empty = none"},
           {"history.out", "string", "", false, "per-epoch history TSV path"},
           {"preds.out", "string", "", false, "eval-split prediction TSV; needs --eval.split"},
           {"labels.out", "string", "", false, "eval-split true-label TSV; needs --eval.split"},
           {"cnn.blocks", "uint", "4", false, "conv+pool blocks"},
           {"cnn.filters", "uint", "16", false, "filters per conv"},
           {"cnn.kernel", "uint", "5", false, "conv kernel size"},
           {"cnn.fc", "uint", "128", false, "hidden units in the fc layer"},
           {"cnn.dropout.conv", "float", "0.25", false, "dropout after each pool; 0 disables"},
           {"cnn.dropout.fc", "float", "0.5", false, "dropout after the fc layer; 0 disables"},
           {"cae.lr", "float", "0.01", false, "pretraining rate; bounds cae.finetune.lr"},
           {"cae.finetune.lr", "float", "0.001", false, "fine-tuning learning rate"},
           {"cae.momentum", "float", "0.9", false, "momentum coefficient"},
           {"cae.finetune.epochs", "uint", "10", false, "fine-tuning epochs"},
           {"cae.batch", "uint", "32", false, "minibatch size"},
           {"seed", "uint", "1", false, "init and shuffle seed"},
       })},
      {"train-head", "train a linear head on a feature file",
       with_universal({
           {"features", "string", "", true, "FEAT binary or CSV feature file"},
           {"out", "string", "", true, "head file to write"},
           {"head.kind", "string", "softmax", false, "softmax | svm"},
           {"head.lr", "float", "0.1", false, "learning rate"},
           {"head.l2", "float", "0.0001", false, "l2 penalty"},
           {"head.epochs", "uint", "50", false, "training epochs"},
           {"head.batch", "uint", "32", false, "minibatch size"},
           {"seed", "uint", "1", false, "shuffle seed"},
       })},
      {"ensemble", "weighted-average heads over per-member features",
       with_universal({
           {"heads", "string", "", true, "comma-separated head files"},
           {"features", "string", "", true, "comma-separated eval feature files, one per head"},
           {"val", "string", "", false, "comma-separated validation feature files; default = features"},
           {"k", "uint", "0", false, "keep the top k members by validation accuracy; 0 = all"},
           {"weights", "string", "uniform", false, "uniform | accuracy"},
           {"out", "string", "", true, "output directory (preds.tsv, metrics.json)"},
       })},
      {"eval", "score a predictions TSV against a labels TSV",
       with_universal({
           {"preds", "string", "", true, "TSV of id<TAB>predicted label"},
           {"labels", "string", "", true, "TSV of id<TAB>true label"},
           {"classes", "uint", "0", false, "class count; 0 = infer from the data"},
           {"out", "string", "", false, "metrics JSON path; table always prints to stdout"},
       })},
      {"localize", "sliding-window damage heatmap and regions for one image",
       with_universal({
           {"image", "string", "", true, "input PPM image"},
           {"model", "string", "", true, "classifier checkpoint"},
           {"out", "string", "", true, "output directory (heatmap.json, overlay.ppm, regions.tsv)"},
           {"loc.window", "uint", "100", false, "crop side in pixels"},
           {"loc.resize", "uint", "224", false, "classifier input side"},
           {"loc.stride", "uint", "10", false, "grid step; 1 = every pixel"},
           {"loc.threshold", "float", "0.9", false, "detection probability threshold"},
           {"loc.classes", "string", "", false, "comma-separated labels to report; empty = all"},
       })},
  };
  return schema;
}

class RunConfig {
 public:
  RunConfig(const SubcommandSpec& spec, std::map<std::string, std::string> values)
      : spec_(&spec), values_(std::move(values)) {}

  const std::string& subcommand() const { return spec_->name; }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw CliError(spec_->name + ": missing key '" + key + "'");
    return it->second;
  }

  long long get_int(const std::string& key) const {
    return parse_ll(key, get(key));
  }

  std::size_t get_uint(const std::string& key) const {
    const long long v = parse_ll(key, get(key));
    if (v < 0) throw CliError(spec_->name + ": --" + key + " must be non-negative, got " + get(key));
    return static_cast<std::size_t>(v);
  }

  std::uint64_t get_seed(const std::string& key) const {
    try {
      std::size_t pos = 0;
      const std::uint64_t v = std::stoull(get(key), &pos);
      if (pos != get(key).size() || get(key).empty()) throw std::invalid_argument("trail");
      return v;
    } catch (const std::exception&) {
      throw CliError(spec_->name + ": --" + key + " wants an unsigned integer, got '" +
                     get(key) + "'");
    }
  }

  double get_double(const std::string& key) const {
    try {
      std::size_t pos = 0;
      const double v = std::stod(get(key), &pos);
      if (pos != get(key).size() || get(key).empty()) throw std::invalid_argument("trail");
      return v;
    } catch (const std::exception&) {
      throw CliError(spec_->name + ": --" + key + " wants a number, got '" + get(key) + "'");
    }
  }

  const std::map<std::string, std::string>& all() const { return values_; }

 private:
  long long parse_ll(const std::string& key, const std::string& raw) const {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(raw, &pos);
      if (pos != raw.size() || raw.empty()) throw std::invalid_argument("trail");
      return v;
    } catch (const std::exception&) {
      throw CliError(spec_->name + ": --" + key + " wants an integer, got '" + raw + "'");
    }
  }

  const SubcommandSpec* spec_;
  std::map<std::string, std::string> values_;
};

namespace cli_detail {

inline const SubcommandSpec* find_subcommand(const std::string& name) {
  for (const auto& s : cli_schema())
    if (s.name == name) return &s;
  return nullptr;
}

inline const OptionSpec* find_option(const SubcommandSpec& spec, const std::string& key) {
  for (const auto& o : spec.options)
    if (o.key == key) return &o;
  return nullptr;
}

inline std::string subcommand_help(const SubcommandSpec& spec) {
  std::ostringstream os;
  os << "usage: dentnet " << spec.name << " [--key value ...]\n" << spec.help << "\n\noptions:\n";
  for (const auto& o : spec.options) {
    os << "  --" << o.key << " <" << o.type << ">";
    if (o.required)
      os << " (required)";
    else
      os << " (default: " << (o.def.empty() ? "\"\"" : o.def) << ")";
    os << "  " << o.help << "\n";
  }
  os << "  --help  show this text\n";
  return os.str();
}

inline std::string global_help() {
  std::ostringstream os;
  os << "usage: dentnet <subcommand> [--key value ...]\n\nsubcommands:\n";
  for (const auto& s : cli_schema()) os << "  " << s.name << "  " << s.help << "\n";
  os << "\nrun dentnet <subcommand> --help for that subcommand's keys\n";
  return os.str();
}

inline std::map<std::string, std::string> load_json_config(const SubcommandSpec& spec,
                                                           const std::string& path) {
  std::ifstream is(path);
  if (!is) throw CliError(spec.name + ": cannot open config file " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw CliError(spec.name + ": bad JSON in " + path + ": " + e.what());
  }
  if (!j.is_object()) throw CliError(spec.name + ": config " + path + " must be a JSON object");
  std::map<std::string, std::string> out;
  for (const auto& [key, value] : j.items()) {
    if (!find_option(spec, key))
      throw CliError(spec.name + ": unknown config key '" + key + "' in " + path);
    out[key] = value.is_string() ? value.get<std::string>() : value.dump();
  }
  return out;
}

// Defaults, then the JSON config file, then flags.
inline RunConfig resolve_config(const SubcommandSpec& spec,
                                const std::vector<std::pair<std::string, std::string>>& flags) {
  std::map<std::string, std::string> values;
  for (const auto& o : spec.options)
    if (!o.required) values[o.key] = o.def;

  std::string config_path;
  for (const auto& [key, value] : flags)
    if (key == "config") config_path = value;
  if (config_path.empty()) {
    auto it = values.find("config");
    if (it != values.end()) config_path = it->second;
  }
  if (!config_path.empty())
    for (auto& [key, value] : load_json_config(spec, config_path)) values[key] = value;

  for (const auto& [key, value] : flags) {
    if (!find_option(spec, key))
      throw CliError(spec.name + ": unknown key '--" + key + "'");
    values[key] = value;
  }
  for (const auto& o : spec.options)
    if (o.required && values.find(o.key) == values.end())
      throw CliError(spec.name + ": --" + o.key + " is required");
  return RunConfig(spec, std::move(values));
}

inline std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(csv);
  while (std::getline(is, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// Converts config-shaped domain errors into usage errors.
template <typename Fn>
auto checked_config(Fn&& fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    throw CliError(e.what());
  }
}

inline void log_config(const RunConfig& cfg) {
  std::cerr << "[dentnet] " << cfg.subcommand() << " config:";
  for (const auto& [key, value] : cfg.all()) std::cerr << " " << key << "=" << value;
  std::cerr << "\n";
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  os << text;
  if (!os) throw std::runtime_error(path + ": write failed");
}

inline std::map<std::string, int> read_id_value_tsv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path + ": cannot open");
  std::map<std::string, int> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || (line_no == 1 && line.rfind("id\t", 0) == 0)) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": want id<TAB>value");
    const std::string id = line.substr(0, tab);
    if (out.count(id))
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": duplicate id " + id);
    out[id] = std::stoi(line.substr(tab + 1));
  }
  if (out.empty()) throw std::runtime_error(path + ": no rows");
  return out;
}

inline CnnConfig cnn_config_from(const RunConfig& cfg, std::size_t height, std::size_t width,
                                 std::size_t channels, std::size_t classes) {
  CnnConfig topo;
  topo.height = height;
  topo.width = width;
  topo.channels = channels;
  topo.classes = classes;
  topo.conv_blocks = cfg.get_uint("cnn.blocks");
  topo.filters = cfg.get_uint("cnn.filters");
  topo.kernel = cfg.get_uint("cnn.kernel");
  topo.fc_units = cfg.get_uint("cnn.fc");
  if (cfg.all().count("cnn.dropout.conv")) {
    topo.conv_dropout = cfg.get_double("cnn.dropout.conv");
    topo.fc_dropout = cfg.get_double("cnn.dropout.fc");
  } else {
    topo.conv_dropout = 0.0;
    topo.fc_dropout = 0.0;
  }
  checked_config([&] { topo.validate(); return 0; });
  return topo;
}

inline void check_same_image_shape(const LabeledSet& set, const std::string& what) {
  for (std::size_t i = 1; i < set.images.size(); ++i)
    if (!set.images[i].same_shape(set.images[0]))
      throw std::runtime_error(what + ": image " + set.ids[i] + " has shape " +
                               shape_str(set.images[i].shape()) + ", expected " +
                               shape_str(set.images[0].shape()));
}

inline void write_history(const std::string& path, const std::vector<EpochStats>& history) {
  std::ostringstream os;
  os << "epoch\tloss\ttrain_acc\teval_acc\n";
  char buf[64];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof(buf), "%zu\t%.6f\t%.6f\t%.6f\n", e.epoch, e.train_loss,
                  e.train_accuracy, e.eval_accuracy);
    os << buf;
  }
  write_text(path, os.str());
}

inline int cmd_synth(const RunConfig& cfg) {
  SynthConfig sc;
  sc.per_class = cfg.get_uint("n");
  sc.size = cfg.get_uint("size");
  sc.seed = cfg.get_seed("seed");
  checked_config([&] { sc.validate(); return 0; });
  const std::string root = cfg.get("out");

  namespace fs = std::filesystem;
  fs::create_directories(root);
  for (const auto& cls : damage_class_names()) fs::create_directories(root + "/" + cls);

  const std::size_t classes = damage_class_names().size();
  const std::size_t total = classes * sc.per_class;
  std::vector<SynthImage> meta(total);
  parallel_for(total, cfg.get_uint("threads"), [&](std::size_t i) {
    const int label = static_cast<int>(i / sc.per_class);
    SynthImage im = synth_image(label, i % sc.per_class, sc.size, sc.seed);
    write_image(root + "/" + damage_class_names()[static_cast<std::size_t>(label)] + "/" +
                    im.id + ".ppm",
                im.pixels);
    im.pixels = Tensor({1, 1, 1});  // keep ids/boxes, drop the pixels
    im.mask.clear();
    meta[i] = std::move(im);
  });

  DatasetManifest manifest;
  manifest.class_names = damage_class_names();
  for (const auto& im : meta)
    manifest.entries.push_back(
        {im.id, damage_class_names()[static_cast<std::size_t>(im.label)], ""});
  write_manifest(root + "/manifest.tsv", manifest);
  write_regions(root + "/regions.tsv", meta);
  std::cerr << "[dentnet] synth: wrote " << total << " images under " << root << "\n";
  return 0;
}

inline int cmd_split(const RunConfig& cfg) {
  const std::string root = cfg.get("in");
  DatasetManifest manifest = read_manifest(root + "/manifest.tsv");
  checked_config([&] {
    stratified_split(manifest, cfg.get_double("frac"), cfg.get_seed("seed"));
    return 0;
  });
  std::string out = cfg.get("out");
  if (out.empty()) out = root + "/manifest.tsv";
  write_manifest(out, manifest);
  std::size_t train = 0, test = 0;
  for (const auto& e : manifest.entries) (e.split == "train" ? train : test)++;
  std::cerr << "[dentnet] split: " << train << " train / " << test << " test -> " << out << "\n";
  return 0;
}

inline int cmd_augment(const RunConfig& cfg) {
  const std::string in = cfg.get("in");
  const std::string out = cfg.get("out");
  const std::string split = cfg.get("split");

  AugmentSpec spec;
  spec.rot_min_deg = cfg.get_double("rot.min");
  spec.rot_max_deg = cfg.get_double("rot.max");
  spec.flip_prob = cfg.get_double("flip.prob");
  spec.seed = cfg.get_seed("seed");
  checked_config([&] { spec.validate(); return 0; });

  std::ifstream counts_in(cfg.get("counts"));
  if (!counts_in) throw CliError("augment: cannot open counts file " + cfg.get("counts"));
  nlohmann::json counts_json;
  try {
    counts_in >> counts_json;
  } catch (const std::exception& e) {
    throw CliError("augment: bad JSON in " + cfg.get("counts") + ": " + e.what());
  }

  const DatasetManifest manifest = read_manifest(in + "/manifest.tsv");
  namespace fs = std::filesystem;
  fs::create_directories(out);
  for (const auto& cls : manifest.class_names) fs::create_directories(out + "/" + cls);

  DatasetManifest out_manifest;
  out_manifest.class_names = manifest.class_names;
  // Entries outside the augmented split carry over unchanged.
  for (const auto& e : manifest.entries) {
    fs::copy_file(in + "/" + e.class_name + "/" + e.id + ".ppm",
                  out + "/" + e.class_name + "/" + e.id + ".ppm",
                  fs::copy_options::overwrite_existing);
    out_manifest.entries.push_back(e);
  }

  std::cerr << "[dentnet] augment:";
  for (const auto& cls : manifest.class_names) {
    if (!counts_json.contains(cls))
      throw CliError("augment: counts file lacks class '" + cls + "'");
    const std::size_t target = counts_json[cls].get<std::size_t>();

    std::vector<Tensor> originals;
    std::vector<std::string> ids;
    std::string entry_split = split;
    for (const auto& e : manifest.entries) {
      if (e.class_name != cls) continue;
      if (!split.empty() && e.split != split) continue;
      originals.push_back(read_image(in + "/" + cls + "/" + e.id + ".ppm"));
      ids.push_back(e.id);
      entry_split = e.split;
    }
    std::size_t written = 0;
    checked_config([&] {
      augment_class_to_count(originals, ids, target, spec,
                             [&](Tensor copy, std::size_t src, std::size_t j) {
                               const std::string id =
                                   ids[src] + "-aug" + std::to_string(j / originals.size());
                               write_image(out + "/" + cls + "/" + id + ".ppm", copy);
                               out_manifest.entries.push_back({id, cls, entry_split});
                               ++written;
                             });
      return 0;
    });
    std::cerr << " " << cls << "=" << originals.size() + written;
  }
  std::cerr << "\n";
  write_manifest(out + "/manifest.tsv", out_manifest);
  return 0;
}

// Emit the eval split's predictions and/or true labels in the id<TAB>value
// interchange format the eval subcommand scores.
inline void write_eval_tsvs(const RunConfig& cfg, Network& net, const LabeledSet& eval) {
  if (cfg.get("preds.out").empty() && cfg.get("labels.out").empty()) return;
  if (eval.images.empty())
    throw CliError(cfg.subcommand() + ": --preds.out and --labels.out need --eval.split");
  auto dump = [&](const std::string& path, const std::vector<int>& values) {
    std::ostringstream os;
    os << "id\tvalue\n";
    for (std::size_t i = 0; i < eval.ids.size(); ++i)
      os << eval.ids[i] << "\t" << values[i] << "\n";
    write_text(path, os.str());
  };
  if (!cfg.get("preds.out").empty()) dump(cfg.get("preds.out"), predict_labels(net, eval.images));
  if (!cfg.get("labels.out").empty()) dump(cfg.get("labels.out"), eval.labels);
}

inline int cmd_train_cnn(const RunConfig& cfg) {
  const DatasetManifest manifest = read_manifest(cfg.get("in") + "/manifest.tsv");
  const LabeledSet train = load_split(cfg.get("in"), manifest, cfg.get("split"));
  if (train.images.empty())
    throw std::runtime_error("train-cnn: split '" + cfg.get("split") + "' holds no images");
  check_same_image_shape(train, "train-cnn");

  const Shape& s = train.images[0].shape();
  const CnnConfig topo = cnn_config_from(cfg, s[0], s[1], s[2], manifest.class_names.size());

  TrainConfig tc;
  tc.learning_rate = cfg.get_double("train.lr");
  tc.momentum = cfg.get_double("train.momentum");
  tc.batch_size = cfg.get_uint("train.batch");
  tc.epochs = cfg.get_uint("train.epochs");
  tc.seed = cfg.get_seed("seed");
  checked_config([&] { tc.validate(); return 0; });

  Network net = build_damage_cnn(topo);
  Prng init_rng(derive_seed(tc.seed, "init"));
  net.init_params(init_rng);

  LabeledSet eval;
  FitOptions opt;
  opt.log = &std::cerr;
  opt.stop_at_eval_accuracy = cfg.get_double("stop.acc");
  if (!cfg.get("eval.split").empty()) {
    eval = load_split(cfg.get("in"), manifest, cfg.get("eval.split"));
    if (eval.images.empty())
      throw std::runtime_error("train-cnn: eval split '" + cfg.get("eval.split") +
                               "' holds no images");
    opt.eval_images = &eval.images;
    opt.eval_labels = &eval.labels;
  }

  const std::vector<EpochStats> history = train_classifier(net, train.images, train.labels, tc, opt);
  save_network(net, cfg.get("out"));
  if (!cfg.get("history.out").empty()) write_history(cfg.get("history.out"), history);
  write_eval_tsvs(cfg, net, eval);
  std::cerr << "[dentnet] train-cnn: " << net.param_count() << " parameters -> "
            << cfg.get("out") << "\n";
  return 0;
}

inline CaeConfig cae_config_from(const RunConfig& cfg, bool finetune) {
  CaeConfig cc;
  cc.pretrain_lr = cfg.get_double("cae.lr");
  cc.finetune_lr = cfg.get_double("cae.finetune.lr");
  cc.momentum = cfg.get_double("cae.momentum");
  if (finetune)
    cc.finetune_epochs = cfg.get_uint("cae.finetune.epochs");
  else
    cc.pretrain_epochs = cfg.get_uint("cae.epochs");
  cc.batch_size = cfg.get_uint("cae.batch");
  cc.seed = cfg.get_seed("seed");
  checked_config([&] { cc.validate(); return 0; });
  return cc;
}

inline std::string stage_path(const std::string& dir, std::size_t stage) {
  return dir + "/stage_" + std::to_string(stage) + ".dnet";
}

inline PretrainedStage load_pretrained_stage(const std::string& dir, std::size_t stage) {
  StageCheckpoint ck = load_stage(stage_path(dir, stage));
  if (ck.stage_index != stage)
    throw std::runtime_error(stage_path(dir, stage) + ": holds stage " +
                             std::to_string(ck.stage_index));
  PretrainedStage st;
  st.stage_index = ck.stage_index;
  auto params = ck.conv->params();
  st.kernels = *params[0].value;
  st.bias = *params[1].value;
  return st;
}

inline int cmd_pretrain_cae(const RunConfig& cfg) {
  const DatasetManifest manifest = read_manifest(cfg.get("in") + "/manifest.tsv");
  const LabeledSet set = load_split(cfg.get("in"), manifest, cfg.get("split"));
  if (set.images.empty())
    throw std::runtime_error("pretrain-cae: split '" + cfg.get("split") + "' holds no images");
  check_same_image_shape(set, "pretrain-cae");

  const Shape& s = set.images[0].shape();
  const CnnConfig topo = cnn_config_from(cfg, s[0], s[1], s[2], manifest.class_names.size());
  const CaeConfig cc = cae_config_from(cfg, false);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.get("out"));

  const long long stage_arg = cfg.get_int("stage");
  std::vector<std::size_t> stages;
  if (stage_arg < 0)
    for (std::size_t i = 0; i < topo.conv_blocks; ++i) stages.push_back(i);
  else
    stages.push_back(static_cast<std::size_t>(stage_arg));

  for (std::size_t stage : stages) {
    std::vector<PretrainedStage> earlier;
    for (std::size_t i = 0; i < stage; ++i)
      earlier.push_back(load_pretrained_stage(cfg.get("out"), i));
    const StagePretrainResult r =
        checked_config([&] { return cae_pretrain_stage(stage, set.images, topo, cc, earlier,
                                                       &std::cerr); });
    auto conv = stage_conv(topo, r.stage);
    save_stage(*conv, stage, stage_path(cfg.get("out"), stage));
    std::cerr << "[dentnet] pretrain-cae: stage " << stage << " mse " << r.mse_at_init
              << " -> " << r.mse_after << "\n";
  }
  return 0;
}

inline int cmd_finetune(const RunConfig& cfg) {
  const DatasetManifest manifest = read_manifest(cfg.get("in") + "/manifest.tsv");
  const LabeledSet train = load_split(cfg.get("in"), manifest, cfg.get("split"));
  if (train.images.empty())
    throw std::runtime_error("finetune: split '" + cfg.get("split") + "' holds no images");
  check_same_image_shape(train, "finetune");

  const Shape& s = train.images[0].shape();
  const CnnConfig topo = cnn_config_from(cfg, s[0], s[1], s[2], manifest.class_names.size());
  const CaeConfig cc = cae_config_from(cfg, true);

  std::vector<PretrainedStage> stages;
  for (std::size_t i = 0; i < topo.conv_blocks; ++i)
    stages.push_back(load_pretrained_stage(cfg.get("stages"), i));

  LabeledSet eval;
  FitOptions opt;
  opt.log = &std::cerr;
  if (!cfg.get("eval.split").empty()) {
    eval = load_split(cfg.get("in"), manifest, cfg.get("eval.split"));
    if (eval.images.empty())
      throw std::runtime_error("finetune: eval split '" + cfg.get("eval.split") +
                               "' holds no images");
    opt.eval_images = &eval.images;
    opt.eval_labels = &eval.labels;
  }

  std::vector<EpochStats> history;
  Network net = checked_config(
      [&] { return assemble_and_finetune(stages, train.images, train.labels, topo, cc, opt,
                                         &history); });
  save_network(net, cfg.get("out"));
  if (!cfg.get("history.out").empty()) write_history(cfg.get("history.out"), history);
  write_eval_tsvs(cfg, net, eval);
  std::cerr << "[dentnet] finetune: saved " << cfg.get("out") << "\n";
  return 0;
}

inline int cmd_train_head(const RunConfig& cfg) {
  const FeatureSet fs = read_feature_file(cfg.get("features"));
  HeadConfig hc;
  hc.lr = cfg.get_double("head.lr");
  hc.l2 = cfg.get_double("head.l2");
  hc.epochs = cfg.get_uint("head.epochs");
  hc.batch_size = cfg.get_uint("head.batch");
  hc.seed = cfg.get_seed("seed");
  checked_config([&] { hc.validate(); return 0; });

  const std::string kind = cfg.get("head.kind");
  if (kind != "softmax" && kind != "svm")
    throw CliError("train-head: --head.kind must be softmax or svm, got '" + kind + "'");
  const LinearHead head = checked_config([&] {
    return kind == "softmax" ? train_softmax_head(fs, hc) : train_svm_head(fs, hc);
  });
  save_head(head, cfg.get("out"));
  std::cerr << "[dentnet] train-head: " << kind << " train accuracy "
            << head_accuracy(head, fs) << " -> " << cfg.get("out") << "\n";
  return 0;
}

inline int cmd_ensemble(const RunConfig& cfg) {
  const std::vector<std::string> head_paths = split_list(cfg.get("heads"));
  const std::vector<std::string> feature_paths = split_list(cfg.get("features"));
  std::vector<std::string> val_paths = split_list(cfg.get("val"));
  if (val_paths.empty()) val_paths = feature_paths;
  if (head_paths.empty()) throw CliError("ensemble: --heads lists no files");
  if (feature_paths.size() != head_paths.size() || val_paths.size() != head_paths.size())
    throw CliError("ensemble: heads, features and val lists must have equal length");

  std::vector<LinearHead> heads;
  std::vector<FeatureSet> features, val;
  for (std::size_t i = 0; i < head_paths.size(); ++i) {
    heads.push_back(load_head(head_paths[i]));
    features.push_back(read_feature_file(feature_paths[i]));
    val.push_back(read_feature_file(val_paths[i]));
    if (features[i].count() != features[0].count() ||
        features[i].labels != features[0].labels)
      throw std::runtime_error("ensemble: eval feature files disagree on examples or labels");
  }

  std::vector<double> accuracies(heads.size());
  for (std::size_t i = 0; i < heads.size(); ++i)
    accuracies[i] = head_accuracy(heads[i], val[i]);

  const std::size_t k = cfg.get_uint("k") == 0 ? heads.size() : cfg.get_uint("k");
  const std::vector<std::size_t> picked =
      checked_config([&] { return select_top_k(accuracies, k); });

  const std::string mode = cfg.get("weights");
  std::vector<double> weights;
  if (mode == "uniform") {
    weights = uniform_weights(picked.size());
  } else if (mode == "accuracy") {
    std::vector<double> picked_acc;
    for (std::size_t i : picked) picked_acc.push_back(accuracies[i]);
    weights = accuracy_weights(picked_acc);
  } else {
    throw CliError("ensemble: --weights must be uniform or accuracy, got '" + mode + "'");
  }

  std::vector<Tensor> member_probs;
  for (std::size_t i : picked)
    member_probs.push_back(heads[i].predict_probs(features[i].features));
  const Tensor probs = ensemble_predict(member_probs, weights);

  std::vector<int> preds(probs.dim(0));
  for (std::size_t i = 0; i < probs.dim(0); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.dim(1); ++c)
      if (probs(i, c) > probs(i, best)) best = c;
    preds[i] = static_cast<int>(best);
  }

  namespace fs = std::filesystem;
  fs::create_directories(cfg.get("out"));
  std::ostringstream tsv;
  tsv << "id\tvalue\n";
  for (std::size_t i = 0; i < preds.size(); ++i) tsv << i << "\t" << preds[i] << "\n";
  write_text(cfg.get("out") + "/preds.tsv", tsv.str());

  const ConfusionMatrix cm = confusion(preds, features[0].labels, features[0].class_count);
  const MetricsReport report = metrics(cm);
  write_text(cfg.get("out") + "/metrics.json", metrics_json(cm, report) + "\n");
  std::cout << metrics_table(cm, report);
  std::cerr << "[dentnet] ensemble: kept " << picked.size() << " of " << heads.size()
            << " members\n";
  return 0;
}

inline int cmd_eval(const RunConfig& cfg) {
  const std::map<std::string, int> pred_rows = read_id_value_tsv(cfg.get("preds"));
  const std::map<std::string, int> label_rows = read_id_value_tsv(cfg.get("labels"));
  if (pred_rows.size() != label_rows.size())
    throw std::runtime_error("eval: " + std::to_string(pred_rows.size()) +
                             " predictions vs " + std::to_string(label_rows.size()) + " labels");
  std::vector<int> preds, labels;
  int max_value = 0;
  for (const auto& [id, label] : label_rows) {
    auto it = pred_rows.find(id);
    if (it == pred_rows.end()) throw std::runtime_error("eval: no prediction for id " + id);
    preds.push_back(it->second);
    labels.push_back(label);
    max_value = std::max({max_value, it->second, label});
  }
  const std::size_t k = cfg.get_uint("classes") != 0
                            ? cfg.get_uint("classes")
                            : static_cast<std::size_t>(max_value) + 1;
  const ConfusionMatrix cm = checked_config([&] { return confusion(preds, labels, k); });
  const MetricsReport report = metrics(cm);
  std::cout << metrics_table(cm, report);
  if (!cfg.get("out").empty()) write_text(cfg.get("out"), metrics_json(cm, report) + "\n");
  return 0;
}

inline int cmd_localize(const RunConfig& cfg) {
  LocalizeConfig lc;
  lc.window = cfg.get_uint("loc.window");
  lc.resize_to = cfg.get_uint("loc.resize");
  lc.stride = cfg.get_uint("loc.stride");
  lc.threshold = cfg.get_double("loc.threshold");
  for (const std::string& item : split_list(cfg.get("loc.classes"))) {
    try {
      lc.classes_of_interest.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw CliError("localize: --loc.classes wants comma-separated integers, got '" + item +
                     "'");
    }
  }
  checked_config([&] { lc.validate(); return 0; });

  const Tensor image = read_image(cfg.get("image"), 3);
  Network net = load_network(cfg.get("model"));
  const Shape want = {lc.resize_to, lc.resize_to, image.dim(2)};
  if (net.input_shape() != want)
    throw CliError("localize: model expects input " + shape_str(net.input_shape()) +
                   ", resize gives " + shape_str(want));

  CropClassifier classifier = [&net](const Tensor& crop, const Rect&) {
    Shape batched{1};
    batched.insert(batched.end(), crop.shape().begin(), crop.shape().end());
    const Tensor probs = net.forward(crop.reshaped(batched), Mode::Eval);
    return std::vector<double>(probs.data(), probs.data() + probs.size());
  };

  const HeatmapSet hm = sliding_window_map(image, classifier, lc);
  const std::vector<Region> regions = threshold_regions(hm, lc);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.get("out"));
  write_text(cfg.get("out") + "/heatmap.json", heatmap_json(hm) + "\n");
  write_image(cfg.get("out") + "/overlay.ppm", render_overlay(image, regions));
  std::ostringstream tsv;
  tsv << "label\tx\ty\tw\th\tpeak\n";
  char buf[32];
  for (const auto& r : regions) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.peak);
    tsv << r.label << "\t" << r.bbox.x << "\t" << r.bbox.y << "\t" << r.bbox.w << "\t"
        << r.bbox.h << "\t" << buf << "\n";
  }
  write_text(cfg.get("out") + "/regions.tsv", tsv.str());
  std::cerr << "[dentnet] localize: " << regions.size() << " regions -> " << cfg.get("out")
            << "\n";
  return 0;
}

}  // namespace cli_detail

// argv without the program name: {"synth", "--out", "d", ...}.
inline int run_cli(const std::vector<std::string>& args) {
  using namespace cli_detail;
  try {
    if (args.empty()) {
      std::cerr << global_help();
      return 2;
    }
    const std::string& sub = args[0];
    if (sub == "--help" || sub == "-h" || sub == "help") {
      std::cout << global_help();
      return 0;
    }
    const SubcommandSpec* spec = find_subcommand(sub);
    if (!spec) {
      std::cerr << "dentnet: unknown subcommand '" << sub << "'\n" << global_help();
      return 2;
    }

    std::vector<std::pair<std::string, std::string>> flags;
    for (std::size_t i = 1; i < args.size(); ++i) {
      const std::string& arg = args[i];
      if (arg == "--help" || arg == "-h") {
        std::cout << subcommand_help(*spec);
        return 0;
      }
      if (arg.rfind("--", 0) != 0)
        throw CliError(sub + ": expected --key, got '" + arg + "'");
      std::string key = arg.substr(2), value;
      const std::size_t eq = key.find('=');
      if (eq != std::string::npos) {
        value = key.substr(eq + 1);
        key = key.substr(0, eq);
      } else if (i + 1 < args.size() && args[i + 1].rfind("--", 0) != 0) {
        value = args[++i];
      } else {
        const OptionSpec* opt = find_option(*spec, key);
        if (opt && opt->type == "bool")
          value = "true";
        else
          throw CliError(sub + ": --" + key + " needs a value");
      }
      flags.emplace_back(key, value);
    }

    const RunConfig cfg = resolve_config(*spec, flags);
    log_config(cfg);

    if (sub == "synth") return cmd_synth(cfg);
    if (sub == "split") return cmd_split(cfg);
    if (sub == "augment") return cmd_augment(cfg);
    if (sub == "train-cnn") return cmd_train_cnn(cfg);
    if (sub == "pretrain-cae") return cmd_pretrain_cae(cfg);
    if (sub == "finetune") return cmd_finetune(cfg);
    if (sub == "train-head") return cmd_train_head(cfg);
    if (sub == "ensemble") return cmd_ensemble(cfg);
    if (sub == "eval") return cmd_eval(cfg);
    if (sub == "localize") return cmd_localize(cfg);
    throw CliError("unknown subcommand '" + sub + "'");
  } catch (const CliError& e) {
    std::cerr << "dentnet: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "dentnet: " << e.what() << "\n";
    return 1;
  }
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace dentnet
