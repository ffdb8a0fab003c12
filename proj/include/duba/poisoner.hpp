#pragma once

#include "duba/image.hpp"
#include "duba/trigger.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace duba::poisoner {

namespace fs = std::filesystem;

struct Sample {
    fs::path relative; // "<class>/<file>", relative to the dataset root
    int label = 0;
};

// Class-folder dataset. Classes are sorted lexicographically; samples are
// ordered by (class, filename).
struct DatasetIndex {
    fs::path root;
    std::vector<std::string> classes;
    std::vector<Sample> samples;
};

DatasetIndex index_dataset(const fs::path& root);

enum class Sampling { Stratified, Uniform };

// Indices into index.samples, ascending. Exactly round(ratio * N) of them.
// Stratified sampling splits the count across classes in proportion to
// their size, rounding by largest remainder.
std::vector<std::size_t> select_poison_set(const DatasetIndex& index, double ratio, std::uint64_t seed,
                                           Sampling sampling = Sampling::Stratified);

enum class LabelMode { AllToOne, AllToAll };

struct LabelMap {
    LabelMode mode = LabelMode::AllToOne;
    int target = 0; // all-to-one only

    bool operator==(const LabelMap&) const = default;
};

// all-to-one: every label becomes `target`; all-to-all: y -> (y + 1) mod C.
int remap_label(int label, const LabelMap& map, int num_classes);

enum class CropPolicy { Reject, CenterCrop };

struct PoisonOptions {
    trigger::TriggerProfile profile;
    LabelMap label_map;
    double ratio = 0.1;
    std::uint64_t seed = 0;
    Sampling sampling = Sampling::Stratified;
    CropPolicy crop = CropPolicy::Reject;
    Interpolation interpolation = Interpolation::Bilinear;
    int jobs = 1;
};

struct ManifestEntry {
    std::string path;        // relative input path
    std::string output_path; // relative output path
    int original_label = 0;
    int output_label = 0;
    bool poisoned = false;
    std::uint64_t image_key = 0;

    bool operator==(const ManifestEntry&) const = default;
};

struct PoisonManifest {
    int format_version = 1;
    std::uint64_t seed = 0;
    trigger::TriggerProfile profile;
    std::string trigger_path;
    std::string trigger_sha256;
    double poison_ratio = 0.0;
    LabelMap label_map;
    Sampling sampling = Sampling::Stratified;
    CropPolicy crop = CropPolicy::Reject;
    Interpolation interpolation = Interpolation::Bilinear;
    std::string input_root;
    std::vector<std::string> classes;
    std::vector<ManifestEntry> entries;

    std::size_t poisoned_count() const;
};

nlohmann::json to_json(const PoisonManifest& manifest);
PoisonManifest manifest_from_json(const nlohmann::json& j);

// Canonical manifest text: sorted keys, two-space indent, trailing newline.
std::string manifest_text(const PoisonManifest& manifest);
PoisonManifest read_manifest(const fs::path& path);

inline constexpr const char* kManifestName = "manifest.json";

// Key that seeds the per-image trigger mask. Derived from the relative
// path, so re-encoding an input does not change its mask.
std::uint64_t image_key_for(const fs::path& relative);

// Poisons `index` into `out_root`, which must be absent or empty. Poisoned
// samples go to their remapped class folder as PNG; the rest are copied
// byte for byte. Writes and returns the manifest.
PoisonManifest poison_dataset(const DatasetIndex& index, const fs::path& trigger_path,
                              const PoisonOptions& options, const fs::path& out_root);

struct Mismatch {
    std::string path;
    std::string reason;
};

struct VerifyReport {
    std::size_t checked = 0;
    std::vector<Mismatch> mismatches;

    bool ok() const { return mismatches.empty(); }
};

// Recomputes every output from the manifest and compares bytes. Throws
// IoError when the manifest is missing and VerificationError when the
// trigger is missing or its digest differs.
VerifyReport verify_manifest(const fs::path& out_root, const std::optional<fs::path>& trigger_override = {},
                             int jobs = 1);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const fs::path& path);

std::string to_string(LabelMode mode);
LabelMode parse_label_mode(std::string_view text);
std::string to_string(Sampling sampling);
Sampling parse_sampling(std::string_view text);
std::string to_string(CropPolicy crop);
CropPolicy parse_crop_policy(std::string_view text);
std::string to_string(Interpolation method);
Interpolation parse_interpolation(std::string_view text);

} // namespace duba::poisoner
