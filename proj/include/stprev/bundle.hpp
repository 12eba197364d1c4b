#pragma once

// On-disk surface bundle: manifest.json plus flat little-endian float64
// layers over every grid cell (NaN outside the mask), and the viewer
// manifest derived from it.

#include "stprev/prediction.hpp"
#include "stprev/serialize.hpp"

#include <boost/crc.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <iomanip>

namespace stprev {

inline constexpr const char* kBundleFormat = "stprev-surface-bundle";
inline constexpr const char* kViewerFormat = "stprev-viewer-bundle";
inline constexpr int kBundleVersion = 1;

struct PredictionTargets {
    std::vector<double> quantiles{0.025, 0.5, 0.975};
    std::vector<double> thresholds;
    std::vector<Region> regions;  // district series
};

namespace bundle_io {

inline std::string to_bytes(const std::vector<double>& v) {
    std::string s(v.size() * sizeof(double), '\0');
    for (std::size_t i = 0; i < v.size(); ++i) {
        auto bits = std::bit_cast<std::uint64_t>(v[i]);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        std::memcpy(s.data() + i * sizeof(double), &bits, sizeof(double));
    }
    return s;
}

inline std::vector<double> from_bytes(const std::string& s) {
    require(s.size() % sizeof(double) == 0, ErrorKind::Io, "layer size is not a multiple of 8 bytes");
    std::vector<double> v(s.size() / sizeof(double));
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, s.data() + i * sizeof(double), sizeof(double));
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        v[i] = std::bit_cast<double>(bits);
    }
    return v;
}

inline std::string crc32_hex(const std::string& bytes) {
    boost::crc_32_type crc;
    crc.process_bytes(bytes.data(), bytes.size());
    std::ostringstream os;
    os << std::hex << std::setw(8) << std::setfill('0') << crc.checksum();
    return os.str();
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Shortest round-trip text of a level, e.g. 0.025 -> "0.025".
inline std::string level_tag(double v) { return csv::format_double(v); }

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    json to_json() const { return json::array({io::num(lo), io::num(hi)}); }
};

}  // namespace bundle_io

/// Spread an active-cell vector to all grid cells, NaN elsewhere.
inline std::vector<double> full_layer(const SurfaceBundle& b, const Eigen::VectorXd& active) {
    std::vector<double> out(b.grid.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < b.cells.size(); ++i) out[b.cells[i]] = active(static_cast<Eigen::Index>(i));
    return out;
}

inline json grid_json(const PredictionGrid& g) {
    json j{{"n_cells", g.size()}, {"cell_area", g.cell_area}, {"n_active", g.active_cells().size()}};
    if (g.regular) {
        j["layout"] = "regular";
        j["nx"] = g.regular->nx;
        j["ny"] = g.regular->ny;
        j["x0"] = g.regular->x0;
        j["y0"] = g.regular->y0;
        j["dx"] = g.regular->dx;
    } else {
        j["layout"] = "points";
    }
    j["cells_file"] = "grid/cells.f64";
    j["mask_file"] = "grid/mask.f64";
    return j;
}

/// Writes the bundle directory and returns its manifest. Quantile and
/// exceedance layers come from raw draws when retained, otherwise from the
/// sketch; district series need raw draws.
inline json write_bundle(const std::filesystem::path& dir, const SurfaceBundle& b, const PredictionTargets& targets) {
    namespace fs = std::filesystem;
    for (double a : targets.quantiles)
        require(a > 0.0 && a < 1.0, ErrorKind::InvalidArgument, "quantile levels must lie in (0, 1)");
    for (double l : targets.thresholds)
        require(l > 0.0 && l < 1.0, ErrorKind::InvalidArgument, "thresholds must lie in (0, 1)");
    fs::create_directories(dir / "layers");
    fs::create_directories(dir / "grid");

    auto write_layer = [&](const std::string& rel, const std::vector<double>& v) {
        const std::string bytes = bundle_io::to_bytes(v);
        io::write_text((dir / rel).string(), bytes);
        return bundle_io::crc32_hex(bytes);
    };

    std::vector<double> cells, mask;
    for (std::size_t i = 0; i < b.grid.size(); ++i) {
        cells.push_back(b.grid.cell_centers[i][0]);
        cells.push_back(b.grid.cell_centers[i][1]);
        mask.push_back(b.grid.mask[i] ? 1.0 : 0.0);
    }
    json grid = grid_json(b.grid);
    grid["cells_checksum"] = write_layer("grid/cells.f64", cells);
    grid["mask_checksum"] = write_layer("grid/mask.f64", mask);

    json layers = json::array();
    std::map<std::string, std::pair<bundle_io::Range, std::vector<bundle_io::Range>>> scales;
    auto add = [&](const std::string& target, const json& level, std::size_t k, const std::vector<double>& v,
                   std::size_t bands) {
        std::string name = target;
        if (!level.is_null()) name += "_" + bundle_io::level_tag(level.get<double>());
        const std::string rel = "layers/" + name + "_t" + std::to_string(k) + ".f64";
        bundle_io::Range r;
        for (double x : v) r.add(x);
        auto& s = scales[name];
        s.first.add(r.lo);
        s.first.add(r.hi);
        s.second.resize(b.slices.size());
        s.second[k] = r;
        json e{{"name", name},          {"target", target}, {"level", level},       {"time", b.slices[k].time},
               {"time_index", k},       {"file", rel},      {"bands", bands},       {"min", io::num(r.lo)},
               {"max", io::num(r.hi)}};
        e["checksum"] = write_layer(rel, v);
        layers.push_back(std::move(e));
    };

    for (std::size_t k = 0; k < b.slices.size(); ++k) {
        const TimeSlice& s = b.slices[k];
        add("mean", nullptr, k, full_layer(b, s.mean), 1);
        add("sd", nullptr, k, full_layer(b, s.sd), 1);
        for (double a : targets.quantiles) add("quantile", a, k, full_layer(b, quantile_surface(b, a, k)), 1);
        for (double l : targets.thresholds) add("exceedance", l, k, full_layer(b, exceedance_surface(b, l, k)), 1);
        // cell-major: 101 values per cell
        std::vector<double> sk(b.grid.size() * kSketchLevels, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t i = 0; i < b.cells.size(); ++i)
            for (int q = 0; q < kSketchLevels; ++q)
                sk[b.cells[i] * kSketchLevels + static_cast<std::size_t>(q)] = s.sketch(static_cast<Eigen::Index>(i), q);
        add("sketch", nullptr, k, sk, kSketchLevels);
    }

    json scale_json = json::object();
    for (const auto& [name, sc] : scales) {
        json per = json::array();
        for (const auto& r : sc.second) per.push_back(r.to_json());
        scale_json[name] = json{{"global", sc.first.to_json()}, {"per_time", per}};
    }

    json districts = nullptr;
    if (!targets.regions.empty()) {
        std::vector<DistrictSummary> all;
        json ids = json::array();
        for (const auto& r : targets.regions) {
            for (auto& d : district_series(b, r)) all.push_back(std::move(d));
            ids.push_back(r.id);
        }
        const std::string text = district_csv(all);
        io::write_text((dir / "districts.csv").string(), text);
        districts = json{{"file", "districts.csv"}, {"ids", ids}, {"checksum", bundle_io::crc32_hex(text)}};
    }

    json times = json::array();
    for (const auto& s : b.slices) times.push_back(s.time);
    json manifest{{"format", kBundleFormat},
                  {"version", kBundleVersion},
                  {"mode", to_string(b.mode)},
                  {"seed", b.seed},
                  {"B_pred", b.B_pred},
                  {"raw_draws_retained", b.has_draws()},
                  {"grid", grid},
                  {"times", times},
                  {"sketch_levels", kSketchLevels},
                  {"quantiles", targets.quantiles},
                  {"thresholds", targets.thresholds},
                  {"layers", layers},
                  {"scales", scale_json},
                  {"districts", districts}};
    io::write_json((dir / "manifest.json").string(), manifest);
    return manifest;
}

inline json read_manifest(const std::filesystem::path& dir) {
    json m = io::read_json((dir / "manifest.json").string());
    require(io::value_or<std::string>(m, "format", "") == kBundleFormat, ErrorKind::Io,
            dir.string() + " is not a surface bundle");
    require(m.value("version", 0) == kBundleVersion, ErrorKind::Io, "unsupported bundle version");
    return m;
}

/// Reads a layer and checks its length and checksum against the manifest entry.
inline std::vector<double> read_layer(const std::filesystem::path& dir, const json& entry, std::size_t n_cells) {
    const std::string bytes = bundle_io::read_file(dir / entry.at("file").get<std::string>());
    require(bundle_io::crc32_hex(bytes) == entry.at("checksum").get<std::string>(), ErrorKind::Io,
            "checksum mismatch for " + entry.at("file").get<std::string>());
    std::vector<double> v = bundle_io::from_bytes(bytes);
    require(v.size() == n_cells * entry.at("bands").get<std::size_t>(), ErrorKind::Io,
            "layer length mismatch for " + entry.at("file").get<std::string>());
    return v;
}

inline const json& find_layer(const json& manifest, const std::string& name, std::size_t time_index) {
    for (const auto& e : manifest.at("layers"))
        if (e.at("name") == name && e.at("time_index").get<std::size_t>() == time_index) return e;
    fail(ErrorKind::InvalidArgument, "bundle has no layer '" + name + "' at time index " + std::to_string(time_index));
}

/// Static viewer bundle: copies every layer after verifying it and writes
/// viewer.json with geometry, sorted times, targets and colour-scale ranges.
inline json export_viewer(const std::filesystem::path& bundle_dir, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    const json m = read_manifest(bundle_dir);
    const std::size_t n = m.at("grid").at("n_cells").get<std::size_t>();
    fs::create_directories(out_dir / "layers");
    fs::create_directories(out_dir / "grid");

    auto copy_checked = [&](const std::string& rel, const std::string& checksum) {
        const std::string bytes = bundle_io::read_file(bundle_dir / rel);
        require(bundle_io::crc32_hex(bytes) == checksum, ErrorKind::Io, "checksum mismatch for " + rel);
        io::write_text((out_dir / rel).string(), bytes);
    };
    copy_checked("grid/cells.f64", m["grid"]["cells_checksum"]);
    copy_checked("grid/mask.f64", m["grid"]["mask_checksum"]);

    std::vector<std::string> targets;
    for (const auto& e : m.at("layers")) {
        read_layer(bundle_dir, e, n);
        copy_checked(e["file"], e["checksum"]);
        const std::string name = e["name"];
        if (std::find(targets.begin(), targets.end(), name) == targets.end()) targets.push_back(name);
    }
    json series = nullptr;
    if (!m.at("districts").is_null()) {
        copy_checked(m["districts"]["file"], m["districts"]["checksum"]);
        series = m["districts"];
        targets.push_back("district_series");
    }

    std::vector<double> times = m.at("times").get<std::vector<double>>();
    require(std::is_sorted(times.begin(), times.end()), ErrorKind::InvalidArgument, "bundle times are not sorted");

    json v{{"format", kViewerFormat},
           {"version", kBundleVersion},
           {"source", {{"mode", m["mode"]}, {"seed", m["seed"]}, {"B_pred", m["B_pred"]}}},
           {"grid", m["grid"]},
           {"times", times},
           {"targets", targets},
           {"color_scale_modes", json::array({"fixed", "dynamic"})},
           {"sketch_levels", m["sketch_levels"]},
           {"layers", m["layers"]},
           {"scales", m["scales"]},
           {"district_series", series}};
    io::write_json((out_dir / "viewer.json").string(), v);
    return v;
}

}  // namespace stprev
