#include "promptseg/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "promptseg/error.hpp"

namespace promptseg::datasets {

namespace {

std::shared_ptr<const Mask> zero_mask_like(const Image& image) {
  return std::make_shared<const Mask>(image.width, image.height, 0);
}

}  // namespace

Image SampleRecord::load_image() const {
  if (image) return *image;
  if (image_path.empty()) throw InputError("record " + id + " has no image");
  return promptseg::load_image(image_path);
}

Mask SampleRecord::load_mask() const {
  if (negative) {
    const Image img = load_image();
    return Mask(img.width, img.height, 0);
  }
  if (mask) return *mask;
  if (mask_path.empty()) throw InputError("record " + id + " has no mask");
  return promptseg::load_mask(mask_path);
}

Image SampleRecord::load_support_image() const {
  if (!support) throw InputError("record " + id + " has no support");
  if (support->image) return *support->image;
  return promptseg::load_image(support->image_path);
}

Mask SampleRecord::load_support_mask() const {
  if (!support) throw InputError("record " + id + " has no support");
  if (support->mask) return *support->mask;
  return promptseg::load_mask(support->mask_path);
}

Image AnnotatedImage::load_image() const {
  if (image) return *image;
  return promptseg::load_image(image_path);
}

Mask AnnotatedImage::category_mask(std::string_view category) const {
  Mask out;
  for (const auto& [name, m] : objects) {
    if (name != category) continue;
    out = out.empty() ? m : mask_union(out, m);
  }
  if (out.empty()) {
    if (!objects.empty()) return Mask(objects.front().second.width, objects.front().second.height, 0);
    const Image img = load_image();
    return Mask(img.width, img.height, 0);
  }
  return out;
}

bool AnnotatedImage::has_category(std::string_view category) const {
  return std::any_of(objects.begin(), objects.end(), [&](const auto& o) { return o.first == category && o.second.any(); });
}

std::vector<SampleRecord> build_phrasecut_plus(const std::vector<SampleRecord>& records, double q_neg,
                                               std::mt19937_64& rng) {
  if (records.empty()) throw InputError("build_phrasecut_plus: no records");
  if (!(q_neg >= 0.0 && q_neg < 1.0)) throw InputError("q_neg must lie in [0, 1)");

  std::unordered_map<std::string, std::vector<std::size_t>> by_phrase;
  for (std::size_t i = 0; i < records.size(); ++i) by_phrase[records[i].phrase].push_back(i);

  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any_record(0, records.size() - 1);
  constexpr int kMaxRedraws = 64;

  std::vector<SampleRecord> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    SampleRecord r = records[i];
    r.support.reset();
    if (coin(rng) < q_neg) {
      const auto names_object = [&](const std::string& p) {
        return p == r.phrase || std::find(r.present_phrases.begin(), r.present_phrases.end(), p) != r.present_phrases.end();
      };
      std::optional<std::string> replacement;
      for (int attempt = 0; attempt < kMaxRedraws && !replacement; ++attempt) {
        const auto& candidate = records[any_record(rng)].phrase;
        if (!names_object(candidate)) replacement = candidate;
      }
      if (replacement) {
        r.phrase = *replacement;
        r.negative = true;
        r.category.clear();
        r.mask_path.clear();
        if (r.image) r.mask = zero_mask_like(*r.image);
        else r.mask.reset();
        out.push_back(std::move(r));
        continue;
      }
      spdlog::warn("record {}: no replacement phrase absent from the image, kept positive", r.id);
    }
    const auto& group = by_phrase[r.phrase];
    if (group.size() > 1) {
      std::uniform_int_distribution<std::size_t> pick(0, group.size() - 2);
      std::size_t k = pick(rng);
      const std::size_t self_pos = static_cast<std::size_t>(std::find(group.begin(), group.end(), i) - group.begin());
      if (k >= self_pos) ++k;
      const SampleRecord& src = records[group[k]];
      r.support = Support{src.image_path, src.mask_path, src.id, src.image, src.mask};
    }
    out.push_back(std::move(r));
  }
  return out;
}

const std::vector<std::string>& default_prefixes() {
  static const std::vector<std::string> prefixes{"", "a photo of a ", "a photograph of a ", "an image of a "};
  return prefixes;
}

std::string augment_phrase(std::string_view phrase, std::mt19937_64& rng, const std::vector<std::string>& prefixes) {
  if (phrase.empty()) throw InputError("augment_phrase: empty phrase");
  if (prefixes.empty()) return std::string(phrase);
  std::uniform_int_distribution<std::size_t> pick(0, prefixes.size() - 1);
  return prefixes[pick(rng)] + std::string(phrase);
}

namespace {

std::size_t count_in(const Mask& m, const Box& b) {
  std::size_t n = 0;
  for (int y = b.y0; y <= b.y1; ++y)
    for (int x = b.x0; x <= b.x1; ++x) n += m.at(y, x);
  return n;
}

}  // namespace

CropResult object_aware_crop(const Image& image, const Mask& mask, int crop_width, int crop_height,
                             std::mt19937_64& rng, double min_fraction) {
  if (image.width != mask.width || image.height != mask.height) {
    throw InputError("object_aware_crop: image and mask sizes differ");
  }
  if (crop_width <= 0 || crop_height <= 0) throw InputError("object_aware_crop: crop size must be positive");
  const int cw = std::min(crop_width, image.width);
  const int ch = std::min(crop_height, image.height);
  if (cw == image.width && ch == image.height) {
    return {image, mask, Box{0, 0, image.width - 1, image.height - 1}, false};
  }

  std::uniform_int_distribution<int> xs(0, image.width - cw);
  std::uniform_int_distribution<int> ys(0, image.height - ch);
  const std::size_t total = mask.count();
  const auto window_at = [&](int x, int y) { return Box{x, y, x + cw - 1, y + ch - 1}; };

  if (total == 0) {
    const Box w = window_at(xs(rng), ys(rng));
    return {crop(image, w), crop(mask, w), w, false};
  }

  const auto needed = static_cast<std::size_t>(std::ceil(min_fraction * static_cast<double>(total)));
  constexpr int kAttempts = 200;
  for (int i = 0; i < kAttempts; ++i) {
    const Box w = window_at(xs(rng), ys(rng));
    if (count_in(mask, w) >= needed) return {crop(image, w), crop(mask, w), w, false};
  }

  const Box obj = bounding_box(mask);
  const int cx = (obj.x0 + obj.x1) / 2, cy = (obj.y0 + obj.y1) / 2;
  const int x = std::clamp(cx - cw / 2, 0, image.width - cw);
  const int y = std::clamp(cy - ch / 2, 0, image.height - ch);
  const Box w = window_at(x, y);
  spdlog::warn("object_aware_crop: no {}x{} window keeps {:.0f}% of the object, centring on it", cw, ch,
               100.0 * min_fraction);
  return {crop(image, w), crop(mask, w), w, true};
}

std::vector<SampleRecord> crop_records(const std::vector<SampleRecord>& records, int crop_width, int crop_height,
                                       std::mt19937_64& rng, double min_fraction) {
  std::vector<SampleRecord> out;
  out.reserve(records.size());
  std::size_t fallbacks = 0;
  for (const auto& r : records) {
    auto c = object_aware_crop(r.load_image(), r.load_mask(), crop_width, crop_height, rng, min_fraction);
    fallbacks += c.fallback ? 1 : 0;
    SampleRecord cropped = r;
    cropped.image_path.clear();
    cropped.mask_path.clear();
    cropped.image = std::make_shared<const Image>(std::move(c.image));
    cropped.mask = std::make_shared<const Mask>(std::move(c.mask));
    out.push_back(std::move(cropped));
  }
  if (fallbacks > 0) spdlog::info("crop_records: {} of {} records used the centred fallback", fallbacks, records.size());
  return out;
}

std::vector<std::string> words_of(std::string_view phrase) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : phrase) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || u >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

namespace {

std::string join_words(const std::vector<std::string>& words) {
  std::string s;
  for (const auto& w : words) {
    if (!s.empty()) s.push_back(' ');
    s += w;
  }
  return s;
}

std::vector<std::string> plural_forms(const std::string& word) {
  std::vector<std::string> forms{word + "s"};
  const auto ends = [&](std::string_view suf) { return word.size() >= suf.size() && word.ends_with(suf); };
  if (ends("s") || ends("x") || ends("ch") || ends("sh")) forms.push_back(word + "es");
  if (ends("y") && word.size() > 1 && std::string_view("aeiou").find(word[word.size() - 2]) == std::string_view::npos) {
    forms.push_back(word.substr(0, word.size() - 1) + "ies");
  }
  return forms;
}

}  // namespace

ClassRemovalList ClassRemovalList::from_hyponyms(const std::vector<std::string>& seeds,
                                                 const std::map<std::string, std::vector<std::string>>& hyponyms) {
  ClassRemovalList list;
  list.seeds_ = seeds;
  std::vector<std::string> frontier(seeds.begin(), seeds.end());
  std::set<std::string> visited;
  while (!frontier.empty()) {
    const std::string term = frontier.back();
    frontier.pop_back();
    if (!visited.insert(term).second) continue;
    const auto words = words_of(term);
    if (!words.empty()) list.words_.insert(join_words(words));
    if (auto it = hyponyms.find(term); it != hyponyms.end()) {
      for (const auto& h : it->second) frontier.push_back(h);
    }
  }
  std::set<std::string> plurals;
  for (const auto& entry : list.words_) {
    auto words = words_of(entry);
    const std::string last = words.back();
    for (const auto& p : plural_forms(last)) {
      words.back() = p;
      plurals.insert(join_words(words));
    }
  }
  list.words_.insert(plurals.begin(), plurals.end());
  return list;
}

bool ClassRemovalList::matches(std::string_view phrase) const {
  if (words_.empty()) return false;
  const std::string padded = " " + join_words(words_of(phrase)) + " ";
  return std::any_of(words_.begin(), words_.end(),
                     [&](const std::string& w) { return padded.find(" " + w + " ") != std::string::npos; });
}

std::map<std::string, std::vector<std::string>> load_hyponyms(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open hyponym table " + path.string());
  try {
    return nlohmann::json::parse(in).get<std::map<std::string, std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<SampleRecord> filter_unseen_classes(const std::vector<SampleRecord>& records,
                                                const ClassRemovalList& removal) {
  std::vector<SampleRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [&](const SampleRecord& r) { return !removal.matches(r.phrase); });
  return out;
}

AffordanceMapping load_affordance_mapping(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open affordance mapping " + path.string());
  AffordanceMapping m;
  try {
    const auto j = nlohmann::json::parse(in);
    const auto& table = j.contains("mapping") ? j.at("mapping") : j;
    m.prompts = table.get<std::map<std::string, std::vector<std::string>>>();
    if (j.contains("groups")) {
      for (const auto& [group, prompts] : j.at("groups").items()) {
        for (const auto& p : prompts) m.group_of[p.get<std::string>()] = group;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

std::map<std::string, std::vector<SampleRecord>> affordance_subsets(const std::vector<AnnotatedImage>& images,
                                                                    const AffordanceMapping& mapping,
                                                                    const std::set<std::string>& vocabulary) {
  std::set<std::string> unknown;
  for (const auto& [prompt, cats] : mapping.prompts) {
    for (const auto& c : cats) {
      if (!vocabulary.count(c)) unknown.insert(c);
    }
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
    throw ConfigError("affordance mapping names unknown categories: " + list);
  }

  std::map<std::string, std::vector<SampleRecord>> subsets;
  for (const auto& [prompt, cats] : mapping.prompts) {
    auto& subset = subsets[prompt];
    for (const auto& img : images) {
      Mask target;
      std::vector<std::string> present;
      for (const auto& c : cats) {
        if (!img.has_category(c)) continue;
        present.push_back(c);
        const Mask m = img.category_mask(c);
        target = target.empty() ? m : mask_union(target, m);
      }
      if (present.empty()) continue;
      SampleRecord r;
      r.id = img.id + ":" + prompt;
      r.image_path = img.image_path;
      r.image = img.image;
      r.phrase = prompt;
      r.category = prompt;
      r.present_phrases = present;
      r.mask = std::make_shared<const Mask>(std::move(target));
      subset.push_back(std::move(r));
    }
  }
  return subsets;
}

namespace {

Rgb color_of(const std::string& name) {
  if (name == "red") return {0.85f, 0.12f, 0.1f};
  if (name == "green") return {0.15f, 0.7f, 0.2f};
  if (name == "blue") return {0.12f, 0.25f, 0.85f};
  if (name == "yellow") return {0.92f, 0.85f, 0.15f};
  if (name == "purple") return {0.55f, 0.2f, 0.7f};
  if (name == "orange") return {0.95f, 0.55f, 0.1f};
  if (name == "white") return {0.95f, 0.95f, 0.95f};
  if (name == "black") return {0.05f, 0.05f, 0.05f};
  throw ConfigError("synthetic dataset: unknown color '" + name + "'");
}

bool inside_shape(const std::string& shape, double dx, double dy, double half) {
  if (shape == "circle") return dx * dx + dy * dy <= half * half;
  if (shape == "square") return std::abs(dx) <= half && std::abs(dy) <= half;
  if (shape == "triangle") {
    // apex up, base at dy = +half
    if (dy < -half || dy > half) return false;
    const double t = (dy + half) / (2 * half);
    return std::abs(dx) <= t * half;
  }
  if (shape == "diamond") return std::abs(dx) + std::abs(dy) <= half;
  throw ConfigError("synthetic dataset: unknown shape '" + shape + "'");
}

}  // namespace

std::vector<AnnotatedImage> synth_scenes(std::uint64_t seed, std::size_t n, const SynthOptions& o) {
  if (n == 0) throw InputError("synth_scenes: n must be at least 1");
  if (o.colors.empty() || o.shapes.empty() || o.max_objects < 1) throw ConfigError("synthetic dataset: empty vocabulary");
  if (o.min_size < 2 || o.max_size < o.min_size || o.max_size > std::min(o.width, o.height)) {
    throw ConfigError("synthetic dataset: invalid object size range");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_color(0, o.colors.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_shape(0, o.shapes.size() - 1);
  std::uniform_int_distribution<int> pick_count(1, o.max_objects);
  std::uniform_int_distribution<int> pick_size(o.min_size, o.max_size);
  std::uniform_real_distribution<float> noise(-0.06f, 0.06f);
  std::uniform_real_distribution<float> tone(0.3f, 0.6f);

  std::vector<AnnotatedImage> scenes;
  scenes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Image img(o.width, o.height);
    const float base = tone(rng);
    for (auto& v : img.pixels) v = std::clamp(base + noise(rng), 0.f, 1.f);

    AnnotatedImage scene;
    scene.id = "synth-" + std::to_string(seed) + "-" + std::to_string(i);
    std::vector<Mask> masks;
    std::vector<std::string> names;
    const int count = pick_count(rng);
    for (int k = 0; k < count; ++k) {
      std::string name;
      std::string color, shape;
      for (int attempt = 0; attempt < 32; ++attempt) {
        color = o.colors[pick_color(rng)];
        shape = o.shapes[pick_shape(rng)];
        name = color + " " + shape;
        if (std::find(names.begin(), names.end(), name) == names.end()) break;
        name.clear();
      }
      if (name.empty()) break;
      const int size = pick_size(rng);
      const double half = size / 2.0;
      std::uniform_int_distribution<int> cx(size / 2, o.width - 1 - size / 2);
      std::uniform_int_distribution<int> cy(size / 2, o.height - 1 - size / 2);
      const int x0 = cx(rng), y0 = cy(rng);
      const Rgb c = color_of(color);
      Mask m(o.width, o.height, 0);
      for (int y = 0; y < o.height; ++y)
        for (int x = 0; x < o.width; ++x) {
          if (!inside_shape(shape, x - x0, y - y0, half)) continue;
          m.at(y, x) = 1;
          img.at(y, x, 0) = c.r;
          img.at(y, x, 1) = c.g;
          img.at(y, x, 2) = c.b;
          for (auto& earlier : masks) earlier.at(y, x) = 0;
        }
      masks.push_back(std::move(m));
      names.push_back(name);
    }
    for (std::size_t k = 0; k < masks.size(); ++k) {
      if (masks[k].any()) scene.objects.emplace_back(names[k], std::move(masks[k]));
    }
    scene.image = std::make_shared<const Image>(std::move(img));
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

std::vector<SampleRecord> records_from_scenes(const std::vector<AnnotatedImage>& scenes) {
  std::vector<SampleRecord> out;
  for (const auto& s : scenes) {
    std::vector<std::string> present;
    for (const auto& o : s.objects) present.push_back(o.first);
    for (std::size_t k = 0; k < s.objects.size(); ++k) {
      SampleRecord r;
      r.id = s.id + "-" + std::to_string(k);
      r.image_path = s.image_path;
      r.image = s.image;
      r.phrase = s.objects[k].first;
      r.category = s.objects[k].first;
      r.present_phrases = present;
      r.mask = std::make_shared<const Mask>(s.objects[k].second);
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<SampleRecord> synth_dataset(std::uint64_t seed, std::size_t n, const SynthOptions& options) {
  const auto scenes = synth_scenes(seed, n, options);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::vector<SampleRecord> out;
  out.reserve(n);
  for (const auto& s : scenes) {
    auto all = records_from_scenes({s});
    std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
    SampleRecord r = std::move(all[pick(rng)]);
    r.id = s.id;
    out.push_back(std::move(r));
  }
  return out;
}

nlohmann::json to_json(const SampleRecord& r) {
  nlohmann::json j{{"id", r.id},
                   {"image", r.image_path},
                   {"phrase", r.phrase},
                   {"mask", r.mask_path.empty() ? nlohmann::json() : nlohmann::json(r.mask_path)},
                   {"support_image", r.support ? nlohmann::json(r.support->image_path) : nlohmann::json()},
                   {"support_mask", r.support ? nlohmann::json(r.support->mask_path) : nlohmann::json()},
                   {"negative", r.negative}};
  if (!r.category.empty()) j["category"] = r.category;
  if (!r.present_phrases.empty()) j["present"] = r.present_phrases;
  return j;
}

SampleRecord record_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  const auto resolve = [&](const nlohmann::json& v) -> std::string {
    if (v.is_null()) return {};
    std::filesystem::path p = v.get<std::string>();
    if (p.empty()) return {};
    return (p.is_relative() && !base_dir.empty() ? base_dir / p : p).string();
  };
  try {
    SampleRecord r;
    r.id = j.value("id", "");
    r.image_path = resolve(j.at("image"));
    r.phrase = j.at("phrase").get<std::string>();
    r.mask_path = resolve(j.value("mask", nlohmann::json()));
    r.negative = j.value("negative", false);
    r.category = j.value("category", "");
    if (j.contains("present")) r.present_phrases = j.at("present").get<std::vector<std::string>>();
    const auto si = resolve(j.value("support_image", nlohmann::json()));
    const auto sm = resolve(j.value("support_mask", nlohmann::json()));
    if (!si.empty() || !sm.empty()) {
      if (si.empty() || sm.empty()) throw FormatError("record " + r.id + ": support needs both image and mask");
      r.support = Support{si, sm, "", nullptr, nullptr};
    }
    if (r.image_path.empty()) throw FormatError("record " + r.id + ": missing image path");
    if (!r.negative && r.mask_path.empty()) throw FormatError("record " + r.id + ": positive record without mask");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed record: ") + e.what());
  }
}

namespace {

// Paths stored in an index are relative to the index's directory.
std::string relative_to_index(const std::string& p, const std::filesystem::path& index) {
  if (p.empty()) return p;
  const auto dir = std::filesystem::absolute(index).parent_path();
  return std::filesystem::proximate(std::filesystem::absolute(p), dir).generic_string();
}

}  // namespace

void write_jsonl(const std::vector<SampleRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (SampleRecord r : records) {
    r.image_path = relative_to_index(r.image_path, path);
    r.mask_path = relative_to_index(r.mask_path, path);
    if (r.support) {
      r.support->image_path = relative_to_index(r.support->image_path, path);
      r.support->mask_path = relative_to_index(r.support->mask_path, path);
    }
    out << to_json(r).dump() << '\n';
  }
}

std::vector<SampleRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<SampleRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line), path.parent_path()));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void materialize(std::vector<SampleRecord>& records, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::unordered_map<const Image*, std::string> written_images;
  std::unordered_map<std::string, std::pair<std::string, std::string>> by_id;
  auto sanitize = [](std::string s) {
    for (auto& c : s) {
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
    }
    return s;
  };
  for (auto& r : records) {
    const std::string stem = sanitize(r.id);
    if (r.image_path.empty() && r.image) {
      auto it = written_images.find(r.image.get());
      if (it == written_images.end()) {
        const auto p = (dir / (stem + ".png")).string();
        save_image(*r.image, p);
        it = written_images.emplace(r.image.get(), p).first;
      }
      r.image_path = it->second;
    }
    if (r.mask_path.empty() && r.mask && !r.negative) {
      r.mask_path = (dir / (stem + "_mask.png")).string();
      save_mask(*r.mask, r.mask_path);
    }
    by_id[r.id] = {r.image_path, r.mask_path};
  }
  for (auto& r : records) {
    if (!r.support || !r.support->image_path.empty()) continue;
    if (auto it = by_id.find(r.support->source_id); it != by_id.end() && !it->second.second.empty()) {
      r.support->image_path = it->second.first;
      r.support->mask_path = it->second.second;
      continue;
    }
    const std::string stem = sanitize(r.id);
    r.support->image_path = (dir / (stem + "_support.png")).string();
    r.support->mask_path = (dir / (stem + "_support_mask.png")).string();
    save_image(*r.support->image, r.support->image_path);
    save_mask(*r.support->mask, r.support->mask_path);
  }
}

namespace {

std::optional<std::pair<std::uint64_t, std::size_t>> parse_synth_source(const std::string& source) {
  if (!source.starts_with("synth:")) return std::nullopt;
  const auto rest = source.substr(6);
  const auto colon = rest.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument(source);
    return std::pair{static_cast<std::uint64_t>(std::stoull(rest.substr(0, colon))),
                     static_cast<std::size_t>(std::stoull(rest.substr(colon + 1)))};
  } catch (const std::exception&) {
    throw InputError("expected synth:<seed>:<n>, got '" + source + "'");
  }
}

}  // namespace

std::vector<SampleRecord> load_records(const std::string& source) {
  if (auto synth = parse_synth_source(source)) return synth_dataset(synth->first, synth->second);
  return read_jsonl(source);
}

void write_annotated_jsonl(const std::vector<AnnotatedImage>& images, const std::filesystem::path& path,
                           const std::filesystem::path& pixel_dir) {
  std::filesystem::create_directories(pixel_dir);
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& img : images) {
    std::string image_path = img.image_path;
    if (image_path.empty()) {
      image_path = (pixel_dir / (img.id + ".png")).string();
      save_image(img.load_image(), image_path);
    }
    nlohmann::json objects = nlohmann::json::array();
    for (std::size_t k = 0; k < img.objects.size(); ++k) {
      const auto mask_path = (pixel_dir / (img.id + "_obj" + std::to_string(k) + ".png")).string();
      save_mask(img.objects[k].second, mask_path);
      objects.push_back({{"category", img.objects[k].first}, {"mask", relative_to_index(mask_path, path)}});
    }
    out << nlohmann::json{{"id", img.id}, {"image", relative_to_index(image_path, path)}, {"objects", objects}}.dump()
        << '\n';
  }
}

std::vector<AnnotatedImage> read_annotated_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  const auto base = path.parent_path();
  const auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return (fp.is_relative() && !base.empty() ? base / fp : fp).string();
  };
  std::vector<AnnotatedImage> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      AnnotatedImage img;
      img.id = j.value("id", std::to_string(lineno));
      img.image_path = resolve(j.at("image").get<std::string>());
      for (const auto& o : j.value("objects", nlohmann::json::array())) {
        img.objects.emplace_back(o.at("category").get<std::string>(),
                                 promptseg::load_mask(resolve(o.at("mask").get<std::string>())));
      }
      out.push_back(std::move(img));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<AnnotatedImage> load_annotated(const std::string& source) {
  if (auto synth = parse_synth_source(source)) return synth_scenes(synth->first, synth->second);
  return read_annotated_jsonl(source);
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("PROMPTSEG_DATA_DIR"); env && *env) return env;
  return PROMPTSEG_DEFAULT_DATA_DIR;
}

std::pair<std::size_t, std::size_t> shard_range(std::size_t n, std::size_t shard, std::size_t num_shards) {
  if (num_shards == 0 || shard >= num_shards) throw InputError("invalid shard index");
  const std::size_t base = n / num_shards, extra = n % num_shards;
  const std::size_t begin = shard * base + std::min(shard, extra);
  return {begin, begin + base + (shard < extra ? 1 : 0)};
}

std::vector<prompts::PromptSample> load_prompt_samples(const std::string& source) {
  std::vector<prompts::PromptSample> out;
  if (source.starts_with("synth:")) {
    const auto scenes = load_annotated(source);
    std::set<std::string> vocabulary;
    for (const auto& s : scenes)
      for (const auto& [category, mask] : s.objects) vocabulary.insert(category);
    for (const auto& s : scenes) {
      if (s.objects.empty()) continue;
      const auto& [target, mask] = s.objects.front();
      std::vector<std::string> distractors;
      for (const auto& v : vocabulary)
        if (v != target) distractors.push_back(v);
      out.push_back({s.load_image(), mask, target, distractors});
    }
    return out;
  }
  std::ifstream in(source);
  if (!in) throw InputError("cannot open " + source);
  const auto base = std::filesystem::path(source).parent_path();
  const auto resolve = [&](const std::string& p) { return std::filesystem::path(p).is_relative() ? base / p : std::filesystem::path(p); };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({load_image(resolve(j.at("image").get<std::string>())),
                     load_mask(resolve(j.at("mask").get<std::string>())), j.at("target").get<std::string>(),
                     j.value("distractors", std::vector<std::string>{})});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace promptseg::datasets
