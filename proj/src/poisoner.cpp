#include "duba/poisoner.hpp"

#include "duba/errors.hpp"
#include "duba/rng.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <thread>

namespace duba::poisoner {

namespace {

using nlohmann::json;

// Stream tags keep the selection draws apart from the per-image mask draws.
constexpr std::uint64_t kStratumStream = 0x73747261'74756d00ULL;
constexpr std::uint64_t kUniformStream = 0x756e6966'6f726d00ULL;

bool is_image_file(const fs::path& p)
{
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".bmp" || ext == ".jpg" || ext == ".jpeg";
}

bool is_hidden(const fs::path& p)
{
    const std::string name = p.filename().string();
    return !name.empty() && name.front() == '.';
}

std::vector<std::uint8_t> read_bytes(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot read " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad())
        throw IoError("read failed for " + path.string());
    return bytes;
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("write failed for " + path.string());
}

// Runs fn(i) for i in [0, n) on `jobs` threads. Exceptions are caught per
// index and returned as (index, message) in index order.
template <typename Fn>
std::vector<std::pair<std::size_t, std::string>> parallel_for(std::size_t n, int jobs, Fn&& fn)
{
    std::vector<std::string> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (const std::exception& e) {
                errors[i] = e.what();
                if (errors[i].empty())
                    errors[i] = "unknown error";
            }
        }
    };
    const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(std::max<std::size_t>(n, 1))));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (int t = 0; t < threads; ++t)
            pool.emplace_back(worker);
    }
    std::vector<std::pair<std::size_t, std::string>> failed;
    for (std::size_t i = 0; i < n; ++i)
        if (!errors[i].empty())
            failed.emplace_back(i, std::move(errors[i]));
    return failed;
}

// Chooses `count` of [0, n) by a partial Fisher-Yates shuffle.
std::vector<std::size_t> choose(std::size_t n, std::size_t count, CounterRng rng)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < count; ++i)
        std::swap(order[i], order[i + static_cast<std::size_t>(rng.below(n - i))]);
    order.resize(count);
    return order;
}

std::vector<std::uint8_t> render_poisoned(const fs::path& source, const Image& trigger,
                                          const trigger::TriggerProfile& profile, CropPolicy crop,
                                          Interpolation method, std::uint64_t image_key)
{
    Image clean = load(source);
    if (clean.height() % 8 != 0 || clean.width() % 8 != 0) {
        if (crop == CropPolicy::Reject)
            throw DimensionError(source.string() + ": " + std::to_string(clean.height()) + "x" +
                                 std::to_string(clean.width()) +
                                 " is not divisible by 8 (use center cropping to accept it)");
        clean = center_crop(clean, clean.height() / 8 * 8, clean.width() / 8 * 8);
    }
    return encode_png(trigger::poison_image(clean, trigger, profile, image_key, method).poisoned);
}

std::string failure_report(const char* what, const std::vector<std::pair<std::size_t, std::string>>& failed,
                           const std::vector<ManifestEntry>& entries)
{
    std::string msg = std::string(what) + " failed for " + std::to_string(failed.size()) + " file(s):";
    for (const auto& [i, err] : failed)
        msg += "\n  " + entries[i].path + ": " + err;
    return msg;
}

json profile_json(const trigger::TriggerProfile& p)
{
    return json{{"alpha", p.alpha},
                {"beta", p.beta},
                {"lambda", p.lambda},
                {"mask_ratio", p.mask_ratio},
                {"low_threshold", p.low_threshold},
                {"high_threshold", p.high_threshold},
                {"seed", p.seed}};
}

trigger::TriggerProfile profile_from(const json& j)
{
    trigger::TriggerProfile p;
    p.alpha = j.at("alpha").get<double>();
    p.beta = j.at("beta").get<double>();
    p.lambda = j.at("lambda").get<double>();
    p.mask_ratio = j.at("mask_ratio").get<double>();
    p.low_threshold = j.at("low_threshold").get<int>();
    p.high_threshold = j.at("high_threshold").get<int>();
    p.seed = j.at("seed").get<std::uint64_t>();
    return p;
}

} // namespace

DatasetIndex index_dataset(const fs::path& root)
{
    std::error_code ec;
    if (!fs::is_directory(root, ec))
        throw DatasetError("dataset root " + root.string() + " is not a directory");

    DatasetIndex index;
    index.root = root;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && !is_hidden(entry.path()))
            index.classes.push_back(entry.path().filename().string());
    std::sort(index.classes.begin(), index.classes.end());

    std::vector<std::string> unreadable;
    for (int label = 0; label < static_cast<int>(index.classes.size()); ++label) {
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(root / index.classes[label]))
            if (entry.is_regular_file() && !is_hidden(entry.path()) && is_image_file(entry.path()))
                files.push_back(entry.path().filename().string());
        std::sort(files.begin(), files.end());
        for (const std::string& f : files) {
            fs::path relative = fs::path(index.classes[label]) / f;
            if (!std::ifstream(root / relative, std::ios::binary))
                unreadable.push_back(relative.generic_string());
            index.samples.push_back(Sample{std::move(relative), label});
        }
    }
    if (!unreadable.empty()) {
        std::string msg = "unreadable images under " + root.string() + ":";
        for (const auto& u : unreadable)
            msg += "\n  " + u;
        throw DatasetError(msg);
    }
    if (index.samples.empty())
        throw DatasetError("dataset root " + root.string() + " holds no images in class folders");
    return index;
}

std::vector<std::size_t> select_poison_set(const DatasetIndex& index, double ratio, std::uint64_t seed,
                                           Sampling sampling)
{
    if (!(ratio >= 0.0 && ratio <= 1.0))
        throw ConfigError("poison ratio must lie in [0,1], got " + std::to_string(ratio));
    const std::size_t n = index.samples.size();
    const auto m = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));

    std::vector<std::size_t> chosen;
    if (sampling == Sampling::Uniform) {
        chosen = choose(n, m, CounterRng(seed, kUniformStream));
    } else {
        const std::size_t num_classes = index.classes.size();
        std::vector<std::vector<std::size_t>> members(num_classes);
        for (std::size_t i = 0; i < n; ++i)
            members[index.samples[i].label].push_back(i);

        // Quotas proportional to class size, summing to m exactly.
        std::vector<std::size_t> quota(num_classes);
        std::vector<std::size_t> remainder(num_classes);
        std::size_t assigned = 0;
        for (std::size_t c = 0; c < num_classes; ++c) {
            const std::size_t scaled = m * members[c].size();
            quota[c] = scaled / n;
            remainder[c] = scaled % n;
            assigned += quota[c];
        }
        std::vector<std::size_t> by_remainder(num_classes);
        std::iota(by_remainder.begin(), by_remainder.end(), std::size_t{0});
        std::stable_sort(by_remainder.begin(), by_remainder.end(),
                         [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
        for (std::size_t k = 0; assigned < m; ++k, ++assigned)
            ++quota[by_remainder[k]];

        for (std::size_t c = 0; c < num_classes; ++c) {
            for (std::size_t local : choose(members[c].size(), quota[c], CounterRng(seed, kStratumStream + c)))
                chosen.push_back(members[c][local]);
        }
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

int remap_label(int label, const LabelMap& map, int num_classes)
{
    if (num_classes <= 0)
        throw ConfigError("number of classes must be positive");
    if (label < 0 || label >= num_classes)
        throw ConfigError("label " + std::to_string(label) + " outside 0.." + std::to_string(num_classes - 1));
    if (map.mode == LabelMode::AllToAll)
        return (label + 1) % num_classes;
    if (map.target < 0 || map.target >= num_classes)
        throw ConfigError("target class " + std::to_string(map.target) + " outside 0.." +
                          std::to_string(num_classes - 1));
    return map.target;
}

std::size_t PoisonManifest::poisoned_count() const
{
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [](const ManifestEntry& e) { return e.poisoned; }));
}

json to_json(const PoisonManifest& m)
{
    json label_map{{"mode", to_string(m.label_map.mode)}};
    if (m.label_map.mode == LabelMode::AllToOne)
        label_map["target"] = m.label_map.target;

    json entries = json::array();
    for (const ManifestEntry& e : m.entries)
        entries.push_back(json{{"path", e.path},
                               {"output_path", e.output_path},
                               {"original_label", e.original_label},
                               {"output_label", e.output_label},
                               {"poisoned", e.poisoned},
                               {"image_key", e.image_key}});

    return json{{"format_version", m.format_version},
                {"seed", m.seed},
                {"profile", profile_json(m.profile)},
                {"trigger", json{{"path", m.trigger_path}, {"sha256", m.trigger_sha256}}},
                {"poison_ratio", m.poison_ratio},
                {"label_map", label_map},
                {"sampling", to_string(m.sampling)},
                {"crop_policy", to_string(m.crop)},
                {"interpolation", to_string(m.interpolation)},
                {"input_root", m.input_root},
                {"classes", m.classes},
                {"total_count", m.entries.size()},
                {"poisoned_count", m.poisoned_count()},
                {"entries", entries}};
}

PoisonManifest manifest_from_json(const json& j)
{
    try {
        PoisonManifest m;
        m.format_version = j.at("format_version").get<int>();
        if (m.format_version != 1)
            throw FormatError("unsupported manifest format_version " + std::to_string(m.format_version));
        m.seed = j.at("seed").get<std::uint64_t>();
        m.profile = profile_from(j.at("profile"));
        m.trigger_path = j.at("trigger").at("path").get<std::string>();
        m.trigger_sha256 = j.at("trigger").at("sha256").get<std::string>();
        m.poison_ratio = j.at("poison_ratio").get<double>();
        m.label_map.mode = parse_label_mode(j.at("label_map").at("mode").get<std::string>());
        if (m.label_map.mode == LabelMode::AllToOne)
            m.label_map.target = j.at("label_map").at("target").get<int>();
        m.sampling = parse_sampling(j.at("sampling").get<std::string>());
        m.crop = parse_crop_policy(j.at("crop_policy").get<std::string>());
        m.interpolation = parse_interpolation(j.at("interpolation").get<std::string>());
        m.input_root = j.at("input_root").get<std::string>();
        m.classes = j.at("classes").get<std::vector<std::string>>();
        for (const json& e : j.at("entries")) {
            m.entries.push_back(ManifestEntry{e.at("path").get<std::string>(),
                                              e.at("output_path").get<std::string>(),
                                              e.at("original_label").get<int>(),
                                              e.at("output_label").get<int>(),
                                              e.at("poisoned").get<bool>(),
                                              e.at("image_key").get<std::uint64_t>()});
        }
        return m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed manifest: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("malformed manifest: ") + e.what());
    }
}

std::string manifest_text(const PoisonManifest& manifest)
{
    return to_json(manifest).dump(2) + "\n";
}

PoisonManifest read_manifest(const fs::path& path)
{
    if (!fs::exists(path))
        throw IoError("manifest not found: " + path.string());
    const std::vector<std::uint8_t> bytes = read_bytes(path);
    const json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (j.is_discarded())
        throw FormatError(path.string() + " is not valid JSON");
    return manifest_from_json(j);
}

std::uint64_t image_key_for(const fs::path& relative)
{
    return stable_hash(relative.generic_string());
}

PoisonManifest poison_dataset(const DatasetIndex& index, const fs::path& trigger_path, const PoisonOptions& options,
                              const fs::path& out_root)
{
    options.profile.validate();
    if (options.jobs < 1)
        throw ConfigError("jobs must be at least 1");
    const int num_classes = static_cast<int>(index.classes.size());
    if (options.label_map.mode == LabelMode::AllToOne)
        remap_label(0, options.label_map, num_classes);

    if (fs::exists(out_root) && (!fs::is_directory(out_root) || !fs::is_empty(out_root)))
        throw DatasetError("refusing to write into non-empty output " + out_root.string());

    std::error_code ec;
    const fs::path input_root = fs::weakly_canonical(fs::absolute(index.root), ec);
    if (ec)
        throw IoError("cannot resolve " + index.root.string());
    if (fs::exists(out_root)) {
        const fs::path resolved_out = fs::weakly_canonical(fs::absolute(out_root));
        if (resolved_out == input_root)
            throw DatasetError("output root must differ from the dataset root");
    }

    const std::vector<std::uint8_t> trigger_bytes = read_bytes(trigger_path);
    const Image trigger = decode(trigger_bytes);

    PoisonManifest manifest;
    manifest.seed = options.seed;
    manifest.profile = options.profile;
    manifest.trigger_path = fs::weakly_canonical(fs::absolute(trigger_path)).generic_string();
    manifest.trigger_sha256 = sha256_hex(trigger_bytes);
    manifest.poison_ratio = options.ratio;
    manifest.label_map = options.label_map;
    manifest.sampling = options.sampling;
    manifest.crop = options.crop;
    manifest.interpolation = options.interpolation;
    manifest.input_root = input_root.generic_string();
    manifest.classes = index.classes;

    const std::vector<std::size_t> chosen = select_poison_set(index, options.ratio, options.seed, options.sampling);
    std::vector<bool> poisoned(index.samples.size(), false);
    for (std::size_t i : chosen)
        poisoned[i] = true;

    std::set<std::string> outputs;
    for (std::size_t i = 0; i < index.samples.size(); ++i) {
        const Sample& s = index.samples[i];
        ManifestEntry e;
        e.path = s.relative.generic_string();
        e.original_label = s.label;
        e.poisoned = poisoned[i];
        e.image_key = image_key_for(s.relative);
        if (e.poisoned) {
            e.output_label = remap_label(s.label, options.label_map, num_classes);
            const std::string name = index.classes[s.label] + "__" + s.relative.stem().string() + ".png";
            e.output_path = (fs::path(index.classes[e.output_label]) / name).generic_string();
        } else {
            e.output_label = s.label;
            e.output_path = e.path;
        }
        if (!outputs.insert(e.output_path).second)
            throw DatasetError("two samples map to the same output file " + e.output_path);
        manifest.entries.push_back(std::move(e));
    }

    fs::create_directories(out_root);
    for (const std::string& cls : index.classes)
        fs::create_directories(out_root / cls);

    const auto failed = parallel_for(manifest.entries.size(), options.jobs, [&](std::size_t i) {
        const ManifestEntry& e = manifest.entries[i];
        const fs::path source = index.root / index.samples[i].relative;
        const fs::path target = out_root / e.output_path;
        if (!e.poisoned) {
            fs::copy_file(source, target, fs::copy_options::overwrite_existing);
            return;
        }
        write_bytes(target, render_poisoned(source, trigger, options.profile, options.crop, options.interpolation,
                                            e.image_key));
    });
    if (!failed.empty())
        throw DatasetError(failure_report("poisoning", failed, manifest.entries));

    const std::string text = manifest_text(manifest);
    write_bytes(out_root / kManifestName,
                std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    return manifest;
}

VerifyReport verify_manifest(const fs::path& out_root, const std::optional<fs::path>& trigger_override, int jobs)
{
    const PoisonManifest manifest = read_manifest(out_root / kManifestName);
    const fs::path trigger_path = trigger_override.value_or(fs::path(manifest.trigger_path));
    if (!fs::exists(trigger_path))
        throw VerificationError("trigger image not found: " + trigger_path.string());
    const std::vector<std::uint8_t> trigger_bytes = read_bytes(trigger_path);
    if (sha256_hex(trigger_bytes) != manifest.trigger_sha256)
        throw VerificationError("trigger digest mismatch for " + trigger_path.string());
    const Image trigger = decode(trigger_bytes);
    const fs::path input_root(manifest.input_root);

    std::vector<std::string> reasons(manifest.entries.size());
    const auto failed = parallel_for(manifest.entries.size(), jobs, [&](std::size_t i) {
        const ManifestEntry& e = manifest.entries[i];
        const fs::path output = out_root / e.output_path;
        if (!fs::exists(output)) {
            reasons[i] = "output file missing";
            return;
        }
        const std::vector<std::uint8_t> actual = read_bytes(output);
        std::vector<std::uint8_t> expected;
        if (e.poisoned) {
            trigger::TriggerProfile profile = manifest.profile;
            expected = render_poisoned(input_root / e.path, trigger, profile, manifest.crop,
                                       manifest.interpolation, e.image_key);
        } else {
            expected = read_bytes(input_root / e.path);
        }
        if (actual != expected)
            reasons[i] = e.poisoned ? "poisoned image differs from recomputation" : "copy differs from source";
    });

    VerifyReport report;
    report.checked = manifest.entries.size();
    for (const auto& [i, err] : failed)
        reasons[i] = "recomputation failed: " + err;
    for (std::size_t i = 0; i < reasons.size(); ++i)
        if (!reasons[i].empty())
            report.mismatches.push_back(Mismatch{manifest.entries[i].output_path, reasons[i]});
    return report;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 computation failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * length);
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string sha256_file(const fs::path& path)
{
    return sha256_hex(read_bytes(path));
}

std::string to_string(LabelMode mode)
{
    return mode == LabelMode::AllToAll ? "all-to-all" : "all-to-one";
}

LabelMode parse_label_mode(std::string_view text)
{
    if (text == "all-to-one")
        return LabelMode::AllToOne;
    if (text == "all-to-all")
        return LabelMode::AllToAll;
    throw ConfigError("unknown label map mode '" + std::string(text) + "'");
}

std::string to_string(Sampling sampling)
{
    return sampling == Sampling::Uniform ? "uniform" : "stratified";
}

Sampling parse_sampling(std::string_view text)
{
    if (text == "stratified")
        return Sampling::Stratified;
    if (text == "uniform")
        return Sampling::Uniform;
    throw ConfigError("unknown sampling '" + std::string(text) + "'");
}

std::string to_string(CropPolicy crop)
{
    return crop == CropPolicy::CenterCrop ? "center-crop" : "reject";
}

CropPolicy parse_crop_policy(std::string_view text)
{
    if (text == "reject")
        return CropPolicy::Reject;
    if (text == "center-crop")
        return CropPolicy::CenterCrop;
    throw ConfigError("unknown crop policy '" + std::string(text) + "'");
}

std::string to_string(Interpolation method)
{
    switch (method) {
    case Interpolation::Nearest:
        return "nearest";
    case Interpolation::Bicubic:
        return "bicubic";
    case Interpolation::Bilinear:
        break;
    }
    return "bilinear";
}

Interpolation parse_interpolation(std::string_view text)
{
    if (text == "bilinear")
        return Interpolation::Bilinear;
    if (text == "nearest")
        return Interpolation::Nearest;
    if (text == "bicubic")
        return Interpolation::Bicubic;
    throw ConfigError("unknown interpolation '" + std::string(text) + "'");
}

} // namespace duba::poisoner
