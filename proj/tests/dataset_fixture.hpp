#pragma once

// Synthetic class-folder datasets and tree comparison helpers for tests.

#include "duba/image.hpp"
#include "oracles.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>

namespace fixture {

namespace fs = std::filesystem;

inline fs::path fresh_dir(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / "duba_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// `per_class` images of size side x side in each of `classes` folders.
inline fs::path make_dataset(const std::string& name, int classes, int per_class, int side = 32,
                             std::uint64_t seed = 1)
{
    const fs::path root = fresh_dir(name);
    std::mt19937_64 rng(seed);
    for (int c = 0; c < classes; ++c) {
        const fs::path dir = root / ("class_" + std::to_string(c));
        fs::create_directories(dir);
        for (int i = 0; i < per_class; ++i) {
            char file[32];
            std::snprintf(file, sizeof file, "img_%04d.png", i);
            duba::save(oracle::smooth_image(rng, side, side, 3), dir / file);
        }
    }
    return root;
}

inline std::vector<std::uint8_t> read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& root)
{
    std::map<std::string, std::vector<std::uint8_t>> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            files[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
    return files;
}

inline void flip_byte(const fs::path& p, std::size_t offset)
{
    std::vector<std::uint8_t> bytes = read_file(p);
    bytes.at(offset) ^= 0xff;
    std::ofstream(p, std::ios::binary | std::ios::trunc)
        .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace fixture
