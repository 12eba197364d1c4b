#pragma once

// Survey records, CSV ingestion, planar projection, covariate design and
// prediction grids.

#include "stprev/covariance.hpp"
#include "stprev/error.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace stprev {

inline constexpr double kEarthRadiusKm = 6371.0;

struct SurveyRecord {
    std::string id;
    double x = 0.0;  // easting km
    double y = 0.0;  // northing km
    double t = 0.0;  // decimal year
    int n_tested = 1;
    int n_positive = 0;
    std::vector<double> covariates;  // aligned with SurveyDataset::design_columns

    bool operator==(const SurveyRecord&) const = default;
};

struct BoundingBox {
    double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
    bool operator==(const BoundingBox&) const = default;
};

struct LonLat {
    double lon = 0.0;
    double lat = 0.0;
};

/// Origin of an equirectangular projection.
struct ProjectionOrigin {
    double lon0 = 0.0;
    double lat0 = 0.0;
    bool operator==(const ProjectionOrigin&) const = default;
};

struct SurveyDataset {
    std::vector<SurveyRecord> records;
    std::vector<std::string> design_columns;
    BoundingBox region_bbox;
    std::optional<ProjectionOrigin> projection;

    std::size_t size() const { return records.size(); }

    std::vector<SpaceTimePoint> coords() const {
        std::vector<SpaceTimePoint> c;
        c.reserve(records.size());
        for (const auto& r : records) c.push_back({r.x, r.y, r.t});
        return c;
    }

    Eigen::VectorXd positives() const {
        Eigen::VectorXd v(records.size());
        for (std::size_t i = 0; i < records.size(); ++i) v(i) = records[i].n_positive;
        return v;
    }

    Eigen::VectorXd tested() const {
        Eigen::VectorXd v(records.size());
        for (std::size_t i = 0; i < records.size(); ++i) v(i) = records[i].n_tested;
        return v;
    }

    std::optional<std::size_t> column_index(const std::string& name) const {
        for (std::size_t j = 0; j < design_columns.size(); ++j)
            if (design_columns[j] == name) return j;
        return std::nullopt;
    }

    std::size_t distinct_locations() const {
        std::set<std::pair<double, double>> s;
        for (const auto& r : records) s.insert({r.x, r.y});
        return s.size();
    }

    std::size_t distinct_times() const {
        std::set<double> s;
        for (const auto& r : records) s.insert(r.t);
        return s.size();
    }

    void validate() const {
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            const std::string where = "record " + std::to_string(i) + " (id " + r.id + ")";
            require(r.n_tested >= 1, ErrorKind::InvalidCount, where + ": n_tested must be >= 1");
            require(r.n_positive >= 0 && r.n_positive <= r.n_tested, ErrorKind::InvalidCount,
                    where + ": need 0 <= n_positive <= n_tested");
            require(std::isfinite(r.x) && std::isfinite(r.y) && std::isfinite(r.t), ErrorKind::InvalidParam,
                    where + ": non-finite coordinates");
            require(r.covariates.size() == design_columns.size(), ErrorKind::InvalidParam,
                    where + ": covariate count differs from the design columns");
        }
    }

    void update_bbox() {
        if (records.empty()) return;
        region_bbox = {records[0].x, records[0].x, records[0].y, records[0].y};
        for (const auto& r : records) {
            region_bbox.xmin = std::min(region_bbox.xmin, r.x);
            region_bbox.xmax = std::max(region_bbox.xmax, r.x);
            region_bbox.ymin = std::min(region_bbox.ymin, r.y);
            region_bbox.ymax = std::max(region_bbox.ymax, r.y);
        }
    }
};

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

inline double haversine_km(LonLat a, LonLat b) {
    const double d2r = std::acos(-1.0) / 180.0;
    const double dlat = (b.lat - a.lat) * d2r;
    const double dlon = (b.lon - a.lon) * d2r;
    const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a.lat * d2r) * std::cos(b.lat * d2r) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

/// Equirectangular projection about `origin`: x = R cos(ref_lat) dlon,
/// y = R dlat (radians, R = 6371 km).
inline std::vector<std::array<double, 2>> project_lonlat(std::span<const LonLat> points, double ref_lat,
                                                         ProjectionOrigin origin) {
    require(std::abs(ref_lat) < 89.0, ErrorKind::PoleProximity, "reference latitude within 1 degree of a pole");
    const double d2r = std::acos(-1.0) / 180.0;
    const double c = std::cos(ref_lat * d2r);
    std::vector<std::array<double, 2>> out;
    out.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        require(std::abs(p.lat) < 89.0, ErrorKind::PoleProximity,
                "point " + std::to_string(i) + " lies within 1 degree of a pole");
        out.push_back({kEarthRadiusKm * c * (p.lon - origin.lon0) * d2r, kEarthRadiusKm * (p.lat - origin.lat0) * d2r});
    }
    return out;
}

inline ProjectionOrigin centroid(std::span<const LonLat> points) {
    ProjectionOrigin o;
    for (const auto& p : points) {
        o.lon0 += p.lon;
        o.lat0 += p.lat;
    }
    if (!points.empty()) {
        o.lon0 /= static_cast<double>(points.size());
        o.lat0 /= static_cast<double>(points.size());
    }
    return o;
}

/// Projection relative to the centroid of `points`.
inline std::vector<std::array<double, 2>> project_lonlat(std::span<const LonLat> points, double ref_lat) {
    return project_lonlat(points, ref_lat, centroid(points));
}

// ---------------------------------------------------------------------------
// Age splines
// ---------------------------------------------------------------------------

/// Linear splines with one knot each in the lowest (a) and largest (A) age:
/// (a, max(a - knot_a, 0), A, max(A - knot_A, 0)).
inline std::array<double, 4> build_age_splines(double a, double A, double knot_a = 5.0, double knot_A = 20.0) {
    require(a >= 0.0, ErrorKind::InvalidParam, "ages must be >= 0");
    require(a <= A, ErrorKind::AgeOrder, "lowest age exceeds largest age");
    return {a, std::max(a - knot_a, 0.0), A, std::max(A - knot_A, 0.0)};
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace csv {

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::optional<double> parse_double(std::string_view s) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto* begin = s.data();
    if (*begin == '+') ++begin;
    auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

/// Shortest text that parses back to exactly the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::optional<std::size_t> find(const std::string& name) const {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == name) return j;
        return std::nullopt;
    }
};

inline Table read(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
    Table t;
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::MissingColumn, path + ": empty file, header expected");
    t.header = split_line(line);
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        t.rows.push_back(split_line(line));
    }
    return t;
}

}  // namespace csv

/// Column names used when reading survey CSV files. Either x/y (km) or
/// lon/lat (degrees) must be present; the latter are projected.
struct SurveySchema {
    std::string id = "id";
    std::string x = "x_km";
    std::string y = "y_km";
    std::string lon = "lon";
    std::string lat = "lat";
    std::string t = "t";
    std::string n_tested = "n_tested";
    std::string n_positive = "n_positive";
    std::optional<std::vector<std::string>> covariates;  // default: every other column
};

inline SurveyDataset load_surveys(const std::string& path, const SurveySchema& schema = {}) {
    const csv::Table table = csv::read(path);
    auto col = [&](const std::string& name) -> std::size_t {
        auto j = table.find(name);
        if (!j) fail(ErrorKind::MissingColumn, path + ": missing column '" + name + "'");
        return *j;
    };
    const bool planar = table.find(schema.x) && table.find(schema.y);
    const std::size_t cid = col(schema.id);
    const std::size_t cx = planar ? col(schema.x) : col(schema.lon);
    const std::size_t cy = planar ? col(schema.y) : col(schema.lat);
    const std::size_t ct = col(schema.t);
    const std::size_t cn = col(schema.n_tested);
    const std::size_t cp = col(schema.n_positive);

    SurveyDataset ds;
    std::vector<std::size_t> cov_cols;
    if (schema.covariates) {
        for (const auto& name : *schema.covariates) {
            cov_cols.push_back(col(name));
            ds.design_columns.push_back(name);
        }
    } else {
        const std::set<std::size_t> used{cid, cx, cy, ct, cn, cp};
        for (std::size_t j = 0; j < table.header.size(); ++j) {
            if (used.count(j)) continue;
            cov_cols.push_back(j);
            ds.design_columns.push_back(table.header[j]);
        }
    }

    std::vector<LonLat> lonlat;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string where = path + " row " + std::to_string(r + 1);
        require(row.size() == table.header.size(), ErrorKind::NonNumericCell,
                where + ": expected " + std::to_string(table.header.size()) + " cells");
        auto num = [&](std::size_t j) {
            auto v = csv::parse_double(row[j]);
            if (!v) fail(ErrorKind::NonNumericCell, where + ": column '" + table.header[j] + "' is not numeric");
            return *v;
        };
        SurveyRecord rec;
        rec.id = row[cid];
        rec.x = num(cx);
        rec.y = num(cy);
        rec.t = num(ct);
        const double n = num(cn);
        const double yv = num(cp);
        require(n == std::floor(n) && yv == std::floor(yv), ErrorKind::InvalidCount, where + ": counts must be integers");
        require(n >= 1, ErrorKind::InvalidCount, where + ": n_tested must be >= 1");
        require(yv >= 0 && yv <= n, ErrorKind::InvalidCount, where + ": n_positive must lie in [0, n_tested]");
        rec.n_tested = static_cast<int>(n);
        rec.n_positive = static_cast<int>(yv);
        for (std::size_t j : cov_cols) rec.covariates.push_back(num(j));
        if (!planar) lonlat.push_back({rec.x, rec.y});
        ds.records.push_back(std::move(rec));
    }
    if (!planar && !lonlat.empty()) {
        const ProjectionOrigin origin = centroid(lonlat);
        const auto xy = project_lonlat(lonlat, origin.lat0, origin);
        for (std::size_t i = 0; i < xy.size(); ++i) {
            ds.records[i].x = xy[i][0];
            ds.records[i].y = xy[i][1];
        }
        ds.projection = origin;
    }
    ds.update_bbox();
    ds.validate();
    return ds;
}

/// Canonical serialisation: `id,x_km,y_km,t,n_tested,n_positive,<covariates>`
/// with shortest round-trip number formatting, so save/load is byte-stable.
inline std::string to_csv(const SurveyDataset& ds) {
    std::ostringstream os;
    os << "id,x_km,y_km,t,n_tested,n_positive";
    for (const auto& c : ds.design_columns) os << ',' << c;
    os << '\n';
    for (const auto& r : ds.records) {
        os << r.id << ',' << csv::format_double(r.x) << ',' << csv::format_double(r.y) << ','
           << csv::format_double(r.t) << ',' << r.n_tested << ',' << r.n_positive;
        for (double v : r.covariates) os << ',' << csv::format_double(v);
        os << '\n';
    }
    return os.str();
}

inline void save_surveys(const SurveyDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
    out << to_csv(ds);
}

// ---------------------------------------------------------------------------
// Design matrix
// ---------------------------------------------------------------------------

enum class Transform { Identity, Hinge, Indicator };

/// One design column derived from a named covariate: identity, a hinge
/// max(x - knot, 0), or an indicator 1[x > knot].
struct ColumnSpec {
    std::string source;
    Transform transform = Transform::Identity;
    double knot = 0.0;

    std::string name() const {
        switch (transform) {
        case Transform::Hinge: return source + "_hinge" + csv::format_double(knot);
        case Transform::Indicator: return source + "_gt" + csv::format_double(knot);
        case Transform::Identity: break;
        }
        return source;
    }

    double apply(double x) const {
        switch (transform) {
        case Transform::Hinge: return std::max(x - knot, 0.0);
        case Transform::Indicator: return x > knot ? 1.0 : 0.0;
        case Transform::Identity: break;
        }
        return x;
    }
};

/// Column set of the age-spline linear predictor for lowest/largest ages.
inline std::vector<ColumnSpec> age_spline_columns(const std::string& min_age, const std::string& max_age,
                                                  double knot_a = 5.0, double knot_A = 20.0) {
    return {{min_age, Transform::Identity, 0.0},
            {min_age, Transform::Hinge, knot_a},
            {max_age, Transform::Identity, 0.0},
            {max_age, Transform::Hinge, knot_A}};
}

struct DesignMatrix {
    Eigen::MatrixXd rows;                 // N x p, first column intercept
    std::vector<ColumnSpec> column_spec;  // p - 1 entries

    std::vector<std::string> names() const {
        std::vector<std::string> n{"intercept"};
        for (const auto& c : column_spec) n.push_back(c.name());
        return n;
    }
};

/// Design row from a covariate lookup (name -> value).
template <class Lookup>
Eigen::RowVectorXd design_row(const std::vector<ColumnSpec>& specs, Lookup&& lookup) {
    Eigen::RowVectorXd row(specs.size() + 1);
    row(0) = 1.0;
    for (std::size_t j = 0; j < specs.size(); ++j) row(j + 1) = specs[j].apply(lookup(specs[j].source));
    return row;
}

inline DesignMatrix build_design(const SurveyDataset& ds, const std::vector<ColumnSpec>& specs) {
    DesignMatrix d;
    d.column_spec = specs;
    d.rows.resize(ds.size(), specs.size() + 1);
    std::vector<std::size_t> idx;
    for (const auto& s : specs) {
        if (s.source == "t") {
            idx.push_back(static_cast<std::size_t>(-1));
            continue;
        }
        auto j = ds.column_index(s.source);
        if (!j) fail(ErrorKind::MissingColumn, "design column source '" + s.source + "' not in dataset");
        idx.push_back(*j);
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& r = ds.records[i];
        d.rows(i, 0) = 1.0;
        for (std::size_t j = 0; j < specs.size(); ++j) {
            const double x = idx[j] == static_cast<std::size_t>(-1) ? r.t : r.covariates[idx[j]];
            d.rows(i, j + 1) = specs[j].apply(x);
        }
    }
    require(d.rows.allFinite(), ErrorKind::InvalidParam, "design matrix has non-finite entries");
    return d;
}

inline DesignMatrix intercept_only(std::size_t n) {
    return DesignMatrix{Eigen::MatrixXd::Ones(n, 1), {}};
}

// ---------------------------------------------------------------------------
// Regions (GeoJSON polygons)
// ---------------------------------------------------------------------------

/// A polygon (possibly multi-part, with holes) in the planar km frame.
struct Region {
    std::string id;
    std::vector<std::vector<std::array<double, 2>>> rings;

    /// Even-odd rule over all rings, so holes are excluded.
    bool contains(double x, double y) const {
        bool inside = false;
        for (const auto& ring : rings) {
            const std::size_t n = ring.size();
            for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
                const double xi = ring[i][0], yi = ring[i][1];
                const double xj = ring[j][0], yj = ring[j][1];
                if (((yi > y) != (yj > y)) && (x < (xj - xi) * (y - yi) / (yj - yi) + xi)) inside = !inside;
            }
        }
        return inside;
    }
};

/// Reads Polygon / MultiPolygon features. When `origin` is given the
/// coordinates are lon/lat and are projected with it; otherwise they are km.
inline std::vector<Region> load_regions(const std::string& path, std::optional<ProjectionOrigin> origin = {}) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Io, path + ": invalid GeoJSON: " + e.what());
    }
    std::vector<nlohmann::json> features;
    if (doc.value("type", "") == "FeatureCollection") {
        for (const auto& f : doc.at("features")) features.push_back(f);
    } else {
        features.push_back(doc);
    }
    std::vector<Region> out;
    for (std::size_t k = 0; k < features.size(); ++k) {
        const auto& f = features[k];
        const nlohmann::json& geom = f.contains("geometry") ? f.at("geometry") : f;
        Region reg;
        if (f.contains("id")) {
            reg.id = f["id"].is_string() ? f["id"].get<std::string>() : f["id"].dump();
        } else if (f.contains("properties") && f["properties"].contains("name")) {
            reg.id = f["properties"]["name"].get<std::string>();
        } else {
            reg.id = "region" + std::to_string(k);
        }
        auto add_polygon = [&](const nlohmann::json& poly) {
            for (const auto& ring : poly) {
                std::vector<std::array<double, 2>> pts;
                for (const auto& c : ring) {
                    double a = c.at(0).get<double>();
                    double b = c.at(1).get<double>();
                    if (origin) {
                        const LonLat ll{a, b};
                        auto xy = project_lonlat(std::span<const LonLat>(&ll, 1), origin->lat0, *origin);
                        a = xy[0][0];
                        b = xy[0][1];
                    }
                    pts.push_back({a, b});
                }
                reg.rings.push_back(std::move(pts));
            }
        };
        const std::string type = geom.value("type", "");
        if (type == "Polygon") {
            add_polygon(geom.at("coordinates"));
        } else if (type == "MultiPolygon") {
            for (const auto& poly : geom.at("coordinates")) add_polygon(poly);
        } else {
            fail(ErrorKind::InvalidArgument, path + ": unsupported geometry type '" + type + "'");
        }
        out.push_back(std::move(reg));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prediction grid
// ---------------------------------------------------------------------------

/// Row-major regular lattice description, when the grid was generated.
struct RegularLayout {
    std::size_t nx = 0, ny = 0;
    double x0 = 0.0, y0 = 0.0;  // centre of the first cell
    double dx = 1.0;
    bool operator==(const RegularLayout&) const = default;
};

struct PredictionGrid {
    std::vector<std::array<double, 2>> cell_centers;  // km
    double cell_area = 1.0;                            // km^2
    std::vector<double> times;
    std::vector<bool> mask;                            // inside region A
    std::vector<std::string> covariate_names;          // optional per-cell covariates
    Eigen::MatrixXd covariates;                        // cells x names
    std::optional<RegularLayout> regular;

    std::size_t size() const { return cell_centers.size(); }

    std::vector<std::size_t> active_cells() const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) idx.push_back(i);
        return idx;
    }

    void validate() const {
        require(cell_area > 0.0, ErrorKind::InvalidParam, "cell_area must be > 0");
        require(mask.size() == cell_centers.size(), ErrorKind::InvalidParam, "mask length differs from cell count");
        require(!active_cells().empty(), ErrorKind::InvalidParam, "prediction grid has no cells inside the region");
        require(!times.empty(), ErrorKind::InvalidParam, "prediction grid needs at least one time");
        require(covariates.rows() == 0 || covariates.rows() == static_cast<Eigen::Index>(size()),
                ErrorKind::InvalidParam, "grid covariate rows differ from cell count");
    }

    bool same_geometry(const PredictionGrid& o) const {
        return cell_centers == o.cell_centers && times == o.times && mask == o.mask && cell_area == o.cell_area;
    }
};

/// Regular grid of cell centres over a bounding box, optionally masked by a
/// set of regions (a cell is inside when any region contains its centre).
inline PredictionGrid make_grid(const BoundingBox& bbox, double resolution, std::vector<double> times,
                                const std::vector<Region>& regions = {}) {
    require(resolution > 0.0, ErrorKind::InvalidParam, "grid resolution must be > 0");
    require(bbox.xmax > bbox.xmin && bbox.ymax > bbox.ymin, ErrorKind::InvalidParam, "degenerate bounding box");
    PredictionGrid g;
    g.cell_area = resolution * resolution;
    g.times = std::move(times);
    const auto nx = static_cast<std::size_t>(std::ceil((bbox.xmax - bbox.xmin) / resolution));
    const auto ny = static_cast<std::size_t>(std::ceil((bbox.ymax - bbox.ymin) / resolution));
    g.regular = RegularLayout{nx, ny, bbox.xmin + 0.5 * resolution, bbox.ymin + 0.5 * resolution, resolution};
    for (std::size_t j = 0; j < ny; ++j) {
        for (std::size_t i = 0; i < nx; ++i) {
            const double x = bbox.xmin + (static_cast<double>(i) + 0.5) * resolution;
            const double y = bbox.ymin + (static_cast<double>(j) + 0.5) * resolution;
            g.cell_centers.push_back({x, y});
            bool in = regions.empty();
            for (const auto& r : regions) in = in || r.contains(x, y);
            g.mask.push_back(in);
        }
    }
    g.validate();
    return g;
}

/// Grid from a CSV of cell centres: `x_km,y_km[,mask][,covariates...]`.
inline PredictionGrid load_grid_csv(const std::string& path, std::vector<double> times, double cell_area) {
    const csv::Table table = csv::read(path);
    const auto cx = table.find("x_km");
    const auto cy = table.find("y_km");
    if (!cx || !cy) fail(ErrorKind::MissingColumn, path + ": grid needs x_km and y_km columns");
    const auto cm = table.find("mask");
    PredictionGrid g;
    g.cell_area = cell_area;
    g.times = std::move(times);
    std::vector<std::size_t> cov_cols;
    for (std::size_t j = 0; j < table.header.size(); ++j) {
        if (j == *cx || j == *cy || (cm && j == *cm)) continue;
        cov_cols.push_back(j);
        g.covariate_names.push_back(table.header[j]);
    }
    g.covariates.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(cov_cols.size()));
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        auto num = [&](std::size_t j) {
            auto v = j < row.size() ? csv::parse_double(row[j]) : std::nullopt;
            if (!v) fail(ErrorKind::NonNumericCell, path + " row " + std::to_string(r + 1) + ": non-numeric cell");
            return *v;
        };
        g.cell_centers.push_back({num(*cx), num(*cy)});
        g.mask.push_back(cm ? num(*cm) != 0.0 : true);
        for (std::size_t k = 0; k < cov_cols.size(); ++k) g.covariates(r, k) = num(cov_cols[k]);
    }
    g.validate();
    return g;
}

}  // namespace stprev
