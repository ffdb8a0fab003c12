#include "doctest.h"

#include "dataset_fixture.hpp"
#include "duba/cli.hpp"
#include "duba/poisoner.hpp"

#include "json.hpp"

#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = duba::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string data(const std::string& rel)
{
    return (fs::path(DUBA_TEST_DATA_DIR) / rel).string();
}

std::string trigger()
{
    return data("trigger_ear.png");
}

int max_byte_diff(const duba::Image& a, const duba::Image& b)
{
    int worst = 0;
    for (std::size_t i = 0; i < a.values().size(); ++i)
        worst = std::max(worst, std::abs(duba::quantize(a.values()[i]) - duba::quantize(b.values()[i])));
    return worst;
}

} // namespace

TEST_CASE("poison writes an image and a report")
{
    const fs::path dir = fixture::fresh_dir("cli_poison");
    const std::string out = (dir / "p.png").string();
    const Outcome r = run({"poison", data("natural/astronaut.png"), trigger(), out, "--seed", "7", "--emit-residuals"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("psnr_db") != std::string::npos);
    CHECK(duba::load(out).shape() == duba::load(data("natural/astronaut.png")).shape());
    CHECK(fs::exists(dir / "p_residual_spatial.png"));
    CHECK(fs::exists(dir / "p_residual_freq.png"));
    CHECK(fs::exists(dir / "p_pattern.png"));

    const Outcome again = run({"poison", data("natural/astronaut.png"), trigger(), (dir / "q.png").string(), "--seed", "7"});
    REQUIRE(again.code == 0);
    CHECK(fixture::read_file(out) == fixture::read_file(dir / "q.png"));
}

TEST_CASE("poison with identity settings leaves the image alone")
{
    const fs::path dir = fixture::fresh_dir("cli_identity");
    const std::string out = (dir / "p.png").string();
    const Outcome r = run({"poison", data("natural/coffee.png"), trigger(), out, "--alpha", "1", "--beta", "1",
                           "--mask-ratio", "0", "--seed", "1"});
    REQUIRE(r.code == 0);
    CHECK(max_byte_diff(duba::load(out), duba::load(data("natural/coffee.png"))) <= 1);
}

TEST_CASE("poison --json and profile selection")
{
    const fs::path dir = fixture::fresh_dir("cli_json");
    const Outcome r = run({"poison", data("natural/rocket.png"), trigger(), (dir / "p.png").string(), "--profile",
                           "train", "--seed", "3", "--json"});
    REQUIRE(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j["seed"] == 3);
    CHECK(j["report"]["ssim"].get<double>() > 0.5);
    CHECK(j["report"]["psnr"].is_number());

    CHECK(run({"poison", data("natural/rocket.png"), trigger(), (dir / "x.png").string(), "--profile", "nope"}).code == 2);
    CHECK(run({"poison", data("natural/rocket.png"), trigger(), (dir / "x.png").string(), "--alpha", "2"}).code == 2);
}

TEST_CASE("seed resolution")
{
    const fs::path dir = fixture::fresh_dir("cli_seed");
    const Outcome random = run({"poison", data("natural/moon.png"), trigger(), (dir / "a.png").string()});
    REQUIRE(random.code == 0);
    CHECK(random.err.rfind("seed: ", 0) == 0);

    const std::string seed = random.err.substr(6, random.err.find('\n') - 6);
    REQUIRE(run({"poison", data("natural/moon.png"), trigger(), (dir / "b.png").string(), "--seed", seed}).code == 0);
    CHECK(fixture::read_file(dir / "a.png") == fixture::read_file(dir / "b.png"));
}

TEST_CASE("metrics")
{
    const Outcome same = run({"metrics", data("natural/camera.png"), data("natural/camera.png"), "--json"});
    REQUIRE(same.code == 0);
    const json j = json::parse(same.out);
    CHECK(j["psnr"] == "inf");
    CHECK(j["ssim"] == 1.0);
    CHECK(j["freq_residual_energy"] == 0.0);

    const Outcome text = run({"metrics", data("natural/camera.png"), data("natural/moon.png")});
    REQUIRE(text.code == 0);
    CHECK(text.out.find("10.641144") != std::string::npos);

    CHECK(run({"metrics", data("natural/camera.png"), data("natural/astronaut.png")}).code == 3);
    CHECK(run({"metrics", data("natural/camera.png"), data("missing.png")}).code == 3);
}

TEST_CASE("ablate")
{
    const fs::path dir = fixture::fresh_dir("cli_ablate");
    const std::string image = data("natural/immunohistochemistry.png");
    REQUIRE(run({"poison", image, trigger(), (dir / "poison.png").string(), "--seed", "11"}).code == 0);
    REQUIRE(run({"ablate", image, trigger(), (dir / "full.png").string(), "--seed", "11"}).code == 0);
    CHECK(fixture::read_file(dir / "poison.png") == fixture::read_file(dir / "full.png"));

    std::map<std::string, double> hf;
    const double clean_hf = [&] {
        const Outcome r = run({"metrics", image, image, "--json"});
        return json::parse(r.out)["hf_score_clean"].get<double>();
    }();
    for (const char* stage : {"dwt-only", "dwt+fft", "full"}) {
        const Outcome r = run({"ablate", image, trigger(), (dir / (std::string("s_") + stage + ".png")).string(),
                               "--stage", stage, "--seed", "11", "--json"});
        REQUIRE(r.code == 0);
        const json j = json::parse(r.out);
        CHECK(j["stage"] == stage);
        hf[stage] = std::abs(j["report"]["hf_score_poisoned"].get<double>() - clean_hf);
        CHECK(fs::exists(dir / (std::string("s_") + stage + "_residual_spatial.png")));
    }
    CHECK(hf["full"] <= hf["dwt-only"]);
    CHECK(run({"ablate", image, trigger(), (dir / "x.png").string(), "--stage", "fft"}).code == 2);
}

TEST_CASE("poison-dataset and verify")
{
    const fs::path root = fixture::make_dataset("cli_ds_in", 4, 25, 32, 8);
    const fs::path out = fixture::fresh_dir("cli_ds_out") / "poisoned";
    const Outcome r = run({"poison-dataset", root.string(), trigger(), out.string(), "--ratio", "0.25", "--seed", "5",
                           "--jobs", "2"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("poisoned 25 of 100") != std::string::npos);
    const auto manifest = duba::poisoner::read_manifest(out / duba::poisoner::kManifestName);
    CHECK(manifest.poisoned_count() == 25);
    CHECK(manifest.profile == [] {
        auto p = duba::trigger::builtin_profiles().train;
        p.seed = 5;
        return p;
    }());

    const Outcome fresh = run({"verify", out.string(), "--json"});
    CHECK(fresh.code == 0);
    CHECK(json::parse(fresh.out)["mismatches"].empty());

    const auto victim = std::find_if(manifest.entries.begin(), manifest.entries.end(), [](auto& e) { return e.poisoned; });
    fixture::flip_byte(out / victim->output_path, 80);
    const Outcome broken = run({"verify", out.string()});
    CHECK(broken.code == 4);
    CHECK(broken.out.find(victim->output_path) != std::string::npos);

    CHECK(run({"verify", root.string()}).code == 5);
    CHECK(run({"poison-dataset", root.string(), trigger(), out.string(), "--seed", "1"}).code == 3);
    CHECK(run({"poison-dataset", root.string(), trigger(), (out.parent_path() / "t").string(), "--target", "9",
               "--seed", "1"})
              .code == 2);
}

TEST_CASE("usage errors")
{
    CHECK(run({}).code == 2);
    CHECK(run({"poison"}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"poison-dataset", "a", "b", "c", "--ratio", "1.5"}).code == 2);
    CHECK(run({"--help"}).code == 0);
}
