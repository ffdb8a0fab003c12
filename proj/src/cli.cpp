#include "duba/cli.hpp"

#include "duba/errors.hpp"
#include "duba/image.hpp"
#include "duba/metrics.hpp"
#include "duba/poisoner.hpp"
#include "duba/rng.hpp"
#include "duba/trigger.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>

namespace duba::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags shared by every command that runs the trigger pipeline. Explicit
// values override the named profile field by field.
struct ProfileFlags {
    std::string name;
    std::optional<double> alpha;
    std::optional<double> beta;
    std::optional<double> lambda;
    std::optional<double> mask_ratio;
    std::optional<int> low;
    std::optional<int> high;
    std::optional<std::uint64_t> seed;
    std::string interpolation = "bilinear";

    void attach(CLI::App& cmd, const std::string& default_profile)
    {
        name = default_profile;
        cmd.add_option("--profile", name, "Named profile (train or attack)")
            ->check(CLI::IsMember({"train", "attack"}))
            ->capture_default_str();
        cmd.add_option("--alpha", alpha, "Retention of clean level-3 detail bands");
        cmd.add_option("--beta", beta, "Retention of clean level-2 detail bands");
        cmd.add_option("--lambda", lambda, "DCT fusing intensity");
        cmd.add_option("--mask-ratio", mask_ratio, "Fraction of pixels whose trigger is dropped");
        cmd.add_option("--low", low, "8-bit low pixel threshold");
        cmd.add_option("--high", high, "8-bit high pixel threshold");
        cmd.add_option("--seed", seed, "Master seed (falls back to DUBA_SEED, then a random seed)");
        cmd.add_option("--interp", interpolation, "Trigger resize interpolation")
            ->check(CLI::IsMember({"bilinear", "nearest", "bicubic"}))
            ->capture_default_str();
    }

    std::uint64_t resolve_seed(std::ostream& err) const
    {
        if (seed)
            return *seed;
        if (const char* env = std::getenv("DUBA_SEED"); env != nullptr && *env != '\0') {
            try {
                std::size_t used = 0;
                const std::uint64_t value = std::stoull(env, &used, 10);
                if (used == std::string(env).size())
                    return value;
            } catch (const std::exception&) {
            }
            throw ConfigError(std::string("DUBA_SEED is not an unsigned integer: ") + env);
        }
        std::random_device rd;
        const std::uint64_t value = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
        err << "seed: " << value << "\n";
        return value;
    }

    trigger::TriggerProfile build(std::uint64_t resolved_seed) const
    {
        trigger::TriggerProfile p = trigger::profile_by_name(name);
        if (alpha)
            p.alpha = *alpha;
        if (beta)
            p.beta = *beta;
        if (lambda)
            p.lambda = *lambda;
        if (mask_ratio)
            p.mask_ratio = *mask_ratio;
        if (low)
            p.low_threshold = *low;
        if (high)
            p.high_threshold = *high;
        p.seed = resolved_seed;
        p.validate();
        return p;
    }
};

json psnr_json(double psnr)
{
    return std::isinf(psnr) ? json("inf") : json(psnr);
}

json report_json(const metrics::StealthReport& r)
{
    return json{{"psnr", psnr_json(r.psnr)},
                {"ssim", r.ssim},
                {"freq_residual_energy", r.freq_residual_energy},
                {"hf_score_clean", r.hf_score_clean},
                {"hf_score_poisoned", r.hf_score_poisoned}};
}

void print_report(std::ostream& out, const metrics::StealthReport& r)
{
    auto row = [&](const char* label, double v) {
        out << std::left << std::setw(24) << label;
        if (std::isinf(v))
            out << "inf\n";
        else
            out << std::fixed << std::setprecision(6) << v << "\n";
    };
    row("psnr_db", r.psnr);
    row("ssim", r.ssim);
    row("freq_residual_energy", r.freq_residual_energy);
    row("hf_score_clean", r.hf_score_clean);
    row("hf_score_poisoned", r.hf_score_poisoned);
    out.unsetf(std::ios::fixed);
}

fs::path sibling(const fs::path& out, const std::string& suffix)
{
    return out.parent_path() / (out.stem().string() + suffix + ".png");
}

// Spatial residual, frequency residual and trigger-pattern renderings.
std::vector<fs::path> emit_residuals(const fs::path& out, const Image& clean, const Image& staged,
                                     const std::optional<Residual>& pattern)
{
    std::vector<fs::path> written;
    const fs::path spatial = sibling(out, "_residual_spatial");
    save(render_residual(residual(staged, clean)), spatial);
    written.push_back(spatial);
    const fs::path freq = sibling(out, "_residual_freq");
    save(metrics::render_frequency_residual(metrics::freq_residual(staged, clean)), freq);
    written.push_back(freq);
    if (pattern) {
        const fs::path pat = sibling(out, "_pattern");
        save(render_residual(*pattern), pat);
        written.push_back(pat);
    }
    return written;
}

std::uint64_t default_image_key(const fs::path& image)
{
    return poisoner::image_key_for(image.filename());
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Dual-domain stealthy backdoor trigger generation and dataset poisoning", "duba"};
    app.require_subcommand(1);

    // poison
    CLI::App* poison = app.add_subcommand("poison", "Poison a single image");
    std::string poison_in, poison_trigger, poison_out;
    std::optional<std::uint64_t> poison_key;
    bool poison_residuals = false;
    bool poison_json = false;
    ProfileFlags poison_flags;
    poison->add_option("image", poison_in, "Clean image")->required();
    poison->add_option("trigger", poison_trigger, "Trigger image")->required();
    poison->add_option("output", poison_out, "Output PNG")->required();
    poison->add_option("--image-key", poison_key, "Mask key (default: hash of the input file name)");
    poison->add_flag("--emit-residuals", poison_residuals, "Also write residual and pattern renderings");
    poison->add_flag("--json", poison_json, "Print the stealth report as JSON");
    poison_flags.attach(*poison, "attack");

    // poison-dataset
    CLI::App* dataset = app.add_subcommand("poison-dataset", "Poison a class-folder dataset");
    std::string ds_root, ds_trigger, ds_out, ds_label_map = "all-to-one", ds_sampling = "stratified";
    double ds_ratio = 0.1;
    int ds_target = 0;
    int ds_jobs = 1;
    bool ds_crop = false;
    ProfileFlags ds_flags;
    dataset->add_option("root", ds_root, "Dataset root with one folder per class")->required();
    dataset->add_option("trigger", ds_trigger, "Trigger image")->required();
    dataset->add_option("output", ds_out, "Output root (absent or empty)")->required();
    dataset->add_option("--ratio", ds_ratio, "Poisoning ratio")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    dataset->add_option("--label-map", ds_label_map, "Label remapping")
        ->check(CLI::IsMember({"all-to-one", "all-to-all"}))
        ->capture_default_str();
    dataset->add_option("--target", ds_target, "Target class index for all-to-one")->capture_default_str();
    dataset->add_option("--sampling", ds_sampling, "Poison subset sampling")
        ->check(CLI::IsMember({"stratified", "uniform"}))
        ->capture_default_str();
    dataset->add_flag("--center-crop", ds_crop, "Crop images to the largest size divisible by 8");
    dataset->add_option("--jobs", ds_jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    ds_flags.attach(*dataset, "train");

    // metrics
    CLI::App* metrics_cmd = app.add_subcommand("metrics", "Stealthiness report for a clean/poisoned pair");
    std::string m_a, m_b;
    bool m_json = false;
    metrics_cmd->add_option("clean", m_a, "Reference image")->required();
    metrics_cmd->add_option("poisoned", m_b, "Compared image")->required();
    metrics_cmd->add_flag("--json", m_json, "Print JSON");

    // ablate
    CLI::App* ablate = app.add_subcommand("ablate", "Run the pipeline up to one stage");
    std::string ab_in, ab_trigger, ab_out, ab_stage = "full";
    std::optional<std::uint64_t> ab_key;
    bool ab_json = false;
    ProfileFlags ab_flags;
    ablate->add_option("image", ab_in, "Clean image")->required();
    ablate->add_option("trigger", ab_trigger, "Trigger image")->required();
    ablate->add_option("output", ab_out, "Output PNG")->required();
    ablate->add_option("--stage", ab_stage, "Last pipeline stage")
        ->check(CLI::IsMember({"dwt-only", "dwt+fft", "full"}))
        ->capture_default_str();
    ablate->add_option("--image-key", ab_key, "Mask key (default: hash of the input file name)");
    ablate->add_flag("--json", ab_json, "Print the stealth report as JSON");
    ab_flags.attach(*ablate, "attack");

    // verify
    CLI::App* verify = app.add_subcommand("verify", "Replay a poisoned dataset manifest");
    std::string v_root;
    std::optional<std::string> v_trigger;
    int v_jobs = 1;
    bool v_json = false;
    verify->add_option("output", v_root, "Poisoned dataset root")->required();
    verify->add_option("--trigger", v_trigger, "Trigger image (overrides the recorded path)");
    verify->add_option("--jobs", v_jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    verify->add_flag("--json", v_json, "Print JSON");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsageError;
    }

    try {
        if (poison->parsed()) {
            const trigger::TriggerProfile profile = poison_flags.build(poison_flags.resolve_seed(err));
            const Image clean = load(poison_in);
            const Image trig = load(poison_trigger);
            const std::uint64_t key = poison_key.value_or(default_image_key(poison_in));
            const trigger::PoisonResult result = trigger::poison_image(
                clean, trig, profile, key, poisoner::parse_interpolation(poison_flags.interpolation));
            save(result.poisoned, poison_out);
            if (poison_residuals)
                emit_residuals(poison_out, clean, result.poisoned, result.pattern);
            const metrics::StealthReport report = metrics::stealth_report(clean, result.poisoned);
            if (poison_json) {
                out << json{{"output", poison_out}, {"seed", profile.seed}, {"image_key", key},
                            {"report", report_json(report)}}
                           .dump()
                    << "\n";
            } else {
                out << "wrote " << poison_out << "\n";
                print_report(out, report);
            }
            return kOk;
        }

        if (dataset->parsed()) {
            poisoner::PoisonOptions options;
            options.seed = ds_flags.resolve_seed(err);
            options.profile = ds_flags.build(options.seed);
            options.ratio = ds_ratio;
            options.label_map = poisoner::LabelMap{poisoner::parse_label_mode(ds_label_map), ds_target};
            options.sampling = poisoner::parse_sampling(ds_sampling);
            options.crop = ds_crop ? poisoner::CropPolicy::CenterCrop : poisoner::CropPolicy::Reject;
            options.interpolation = poisoner::parse_interpolation(ds_flags.interpolation);
            options.jobs = ds_jobs;
            const poisoner::DatasetIndex index = poisoner::index_dataset(ds_root);
            const poisoner::PoisonManifest manifest = poisoner::poison_dataset(index, ds_trigger, options, ds_out);
            out << "poisoned " << manifest.poisoned_count() << " of " << manifest.entries.size()
                << " images into " << ds_out << " (seed " << manifest.seed << ")\n";
            return kOk;
        }

        if (metrics_cmd->parsed()) {
            const metrics::StealthReport report = metrics::stealth_report(load(m_a), load(m_b));
            if (m_json)
                out << report_json(report).dump() << "\n";
            else
                print_report(out, report);
            return kOk;
        }

        if (ablate->parsed()) {
            const trigger::TriggerProfile profile = ab_flags.build(ab_flags.resolve_seed(err));
            const Image clean = load(ab_in);
            const Image trig = load(ab_trigger);
            const std::uint64_t key = ab_key.value_or(default_image_key(ab_in));
            const trigger::Stage stage = trigger::parse_stage(ab_stage);
            const Image staged = trigger::ablation_poison(clean, trig, profile, stage, key,
                                                          poisoner::parse_interpolation(ab_flags.interpolation));
            save(staged, ab_out);
            emit_residuals(ab_out, clean, staged, std::nullopt);
            const metrics::StealthReport report = metrics::stealth_report(clean, staged);
            if (ab_json) {
                out << json{{"output", ab_out}, {"stage", trigger::stage_name(stage)}, {"seed", profile.seed},
                            {"image_key", key}, {"report", report_json(report)}}
                           .dump()
                    << "\n";
            } else {
                out << "wrote " << ab_out << " (stage " << trigger::stage_name(stage) << ")\n";
                print_report(out, report);
            }
            return kOk;
        }

        if (verify->parsed()) {
            if (!fs::exists(fs::path(v_root) / poisoner::kManifestName)) {
                err << "error: no " << poisoner::kManifestName << " in " << v_root << "\n";
                return kManifestMissing;
            }
            std::optional<fs::path> trigger_override;
            if (v_trigger)
                trigger_override = fs::path(*v_trigger);
            const poisoner::VerifyReport report = poisoner::verify_manifest(v_root, trigger_override, v_jobs);
            if (v_json) {
                json mismatches = json::array();
                for (const auto& m : report.mismatches)
                    mismatches.push_back(json{{"path", m.path}, {"reason", m.reason}});
                out << json{{"checked", report.checked}, {"mismatches", mismatches}}.dump() << "\n";
            } else {
                out << "checked " << report.checked << " files, " << report.mismatches.size() << " mismatch(es)\n";
                for (const auto& m : report.mismatches)
                    out << "  " << m.path << ": " << m.reason << "\n";
            }
            return report.ok() ? kOk : kVerificationFailed;
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const VerificationError& e) {
        err << "error: " << e.what() << "\n";
        return kVerificationFailed;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kProcessingError;
    }
    return kUsageError;
}

} // namespace duba::cli
