#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "promptseg/image.hpp"
#include "promptseg/visual_prompts.hpp"

namespace promptseg::datasets {

// A support (image, mask) pair drawn from another record with the same phrase.
struct Support {
  std::string image_path;
  std::string mask_path;
  std::string source_id;
  std::shared_ptr<const Image> image;
  std::shared_ptr<const Mask> mask;
};

// One (image, phrase, target) training or evaluation sample. Pixel data is
// held in memory when present; otherwise it is read from the paths.
struct SampleRecord {
  std::string id;
  std::string image_path;
  std::string mask_path;
  std::string phrase;
  std::string category;                     // class of the target object, empty for free-form phrases
  std::vector<std::string> present_phrases;  // phrases of every annotated object in the image
  std::optional<Support> support;
  bool negative = false;
  std::shared_ptr<const Image> image;
  std::shared_ptr<const Mask> mask;

  Image load_image() const;
  // Negatives resolve to an all-zero mask of the image size.
  Mask load_mask() const;
  Image load_support_image() const;
  Mask load_support_mask() const;
};

// One image with its per-category instance masks.
struct AnnotatedImage {
  std::string id;
  std::string image_path;
  std::shared_ptr<const Image> image;
  std::vector<std::pair<std::string, Mask>> objects;  // (category, mask)

  Image load_image() const;
  // Union of every object of `category`; empty mask when absent.
  Mask category_mask(std::string_view category) const;
  bool has_category(std::string_view category) const;
};

// Adds supports and negatives. With probability q_neg a record becomes a
// negative: its phrase is replaced by another record's phrase that names no
// object in the image, its mask is zeroed and it carries no support.
// Otherwise a support is drawn uniformly from the other records sharing its
// phrase, if any. Throws InputError for empty input or q_neg outside [0, 1).
std::vector<SampleRecord> build_phrasecut_plus(const std::vector<SampleRecord>& records, double q_neg,
                                               std::mt19937_64& rng);

const std::vector<std::string>& default_prefixes();
std::string augment_phrase(std::string_view phrase, std::mt19937_64& rng,
                           const std::vector<std::string>& prefixes = default_prefixes());

struct CropResult {
  Image image;
  Mask mask;
  Box window;
  bool fallback = false;
};

inline constexpr double kMinVisibleObjectFraction = 0.2;

// Random crop_width x crop_height window keeping at least min_fraction of the
// object's pixels. Windows at least as large as the image return the input.
// When no admissible window is found the crop is centred on the object and
// a warning is logged. Negatives (empty masks) crop unconstrained.
CropResult object_aware_crop(const Image& image, const Mask& mask, int crop_width, int crop_height,
                             std::mt19937_64& rng, double min_fraction = kMinVisibleObjectFraction);

// Object-aware crop of every record's image and mask; records keep their ids
// and hold the cropped pixels in memory. Run before build_phrasecut_plus so
// supports are drawn from cropped samples.
std::vector<SampleRecord> crop_records(const std::vector<SampleRecord>& records, int crop_width, int crop_height,
                                       std::mt19937_64& rng, double min_fraction = kMinVisibleObjectFraction);

// Seed classes and the words that must not appear in training prompts.
class ClassRemovalList {
 public:
  ClassRemovalList() = default;
  // Closure over the hyponym table, plus simple plural forms. Seeds missing
  // from the table contribute themselves only.
  static ClassRemovalList from_hyponyms(const std::vector<std::string>& seeds,
                                        const std::map<std::string, std::vector<std::string>>& hyponyms);

  const std::vector<std::string>& seeds() const { return seeds_; }
  const std::set<std::string>& words() const { return words_; }
  bool empty() const { return words_.empty(); }
  // Whole-word, case-insensitive; multi-word entries match as word sequences.
  bool matches(std::string_view phrase) const;

 private:
  std::vector<std::string> seeds_;
  std::set<std::string> words_;
};

std::map<std::string, std::vector<std::string>> load_hyponyms(const std::filesystem::path& path);

std::vector<SampleRecord> filter_unseen_classes(const std::vector<SampleRecord>& records,
                                                const ClassRemovalList& removal);

struct AffordanceMapping {
  std::map<std::string, std::vector<std::string>> prompts;  // prompt -> categories
  std::map<std::string, std::string> group_of;              // prompt -> affordance / attribute / meronymy
};

AffordanceMapping load_affordance_mapping(const std::filesystem::path& path);

// Per prompt, one record per image containing any mapped category, with the
// union of those categories' masks as target. Throws ConfigError naming every
// mapped category missing from `vocabulary`.
std::map<std::string, std::vector<SampleRecord>> affordance_subsets(const std::vector<AnnotatedImage>& images,
                                                                    const AffordanceMapping& mapping,
                                                                    const std::set<std::string>& vocabulary);

struct SynthOptions {
  int width = 64;
  int height = 64;
  int max_objects = 2;
  std::vector<std::string> colors{"red", "green", "blue", "yellow"};
  std::vector<std::string> shapes{"circle", "square", "triangle"};
  int min_size = 14;
  int max_size = 26;

  std::size_t vocabulary_bound() const { return colors.size() * shapes.size(); }
};

// Colored-shape scenes on a textured background, one category per
// "<color> <shape>" phrase. Deterministic per seed.
std::vector<AnnotatedImage> synth_scenes(std::uint64_t seed, std::size_t n, const SynthOptions& options = {});
// n positive records, one target object per scene.
std::vector<SampleRecord> synth_dataset(std::uint64_t seed, std::size_t n, const SynthOptions& options = {});
// Every object of every scene as a record.
std::vector<SampleRecord> records_from_scenes(const std::vector<AnnotatedImage>& scenes);

// {"image", "phrase", "mask", "support_image", "support_mask", "negative"}
// plus optional "id" and "category".
nlohmann::json to_json(const SampleRecord& record);
SampleRecord record_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

void write_jsonl(const std::vector<SampleRecord>& records, const std::filesystem::path& path);
// Relative paths resolve against the index file's directory.
std::vector<SampleRecord> read_jsonl(const std::filesystem::path& path);

// Writes in-memory pixels under `dir` as PNG files and points the records at
// them. Records already backed by files are left as they are.
void materialize(std::vector<SampleRecord>& records, const std::filesystem::path& dir);

// "synth:<seed>:<n>" or a JSONL index path.
std::vector<SampleRecord> load_records(const std::string& source);

// Annotated-image index, one JSON object per line:
// {"id", "image", "objects": [{"category", "mask"}]}.
void write_annotated_jsonl(const std::vector<AnnotatedImage>& images, const std::filesystem::path& path,
                           const std::filesystem::path& pixel_dir);
std::vector<AnnotatedImage> read_annotated_jsonl(const std::filesystem::path& path);
// "synth:<seed>:<n>" or an annotated-image index path.
std::vector<AnnotatedImage> load_annotated(const std::string& source);

// Alignment-study samples: "synth:<seed>:<n>" (first object of each scene
// as target, the rest of the vocabulary as distractors) or JSONL lines
// {"image", "mask", "target", "distractors"}.
std::vector<prompts::PromptSample> load_prompt_samples(const std::string& source);

// Disjoint index range [begin, end) owned by `shard` of `num_shards`.
std::pair<std::size_t, std::size_t> shard_range(std::size_t n, std::size_t shard, std::size_t num_shards);

// PROMPTSEG_DATA_DIR when set, else the data directory of the source tree.
std::filesystem::path default_data_dir();

// Lower-case word tokens of a phrase.
std::vector<std::string> words_of(std::string_view phrase);

}  // namespace promptseg::datasets
