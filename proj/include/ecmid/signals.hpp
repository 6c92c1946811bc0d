#pragma once

// Sampled battery records: CSV ingestion, uniform resampling, Coulomb counting
// and SOC ordering.

#include "ecmid/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ecmid {

/// Uniformly sampled current/voltage record. Current is in amperes with
/// charging positive, voltage in volts, soc a unitless fraction.
struct SampledRecord {
    double ts = 1.0;
    double t0 = 0.0;
    Eigen::VectorXd current;
    Eigen::VectorXd voltage;
    std::optional<Eigen::VectorXd> soc;

    [[nodiscard]] Eigen::Index size() const noexcept { return current.size(); }
    [[nodiscard]] bool has_soc() const noexcept { return soc.has_value(); }
    [[nodiscard]] double time(Eigen::Index j) const noexcept { return t0 + static_cast<double>(j) * ts; }
};

struct BatteryMeta {
    double capacity_ah = 2.0;
    double initial_soc = 0.5;
};

inline constexpr double kSocTolerance = 1e-9;

inline void validate(const BatteryMeta& meta)
{
    require(std::isfinite(meta.capacity_ah) && meta.capacity_ah > 0.0, ErrorCode::InvalidArgument,
            "capacity_ah must be > 0");
    require(meta.initial_soc >= 0.0 && meta.initial_soc <= 1.0, ErrorCode::InvalidArgument,
            "initial_soc must lie in [0, 1]");
}

inline void validate(const SampledRecord& rec)
{
    require(std::isfinite(rec.ts) && rec.ts > 0.0, ErrorCode::InvalidRecord, "ts must be > 0");
    require(rec.current.size() == rec.voltage.size(), ErrorCode::InvalidRecord,
            "current and voltage lengths differ");
    require(rec.current.size() >= 2, ErrorCode::InvalidRecord, "record needs at least 2 samples");
    if (rec.soc) {
        require(rec.soc->size() == rec.current.size(), ErrorCode::InvalidRecord, "soc length differs");
        for (double z : *rec.soc) {
            require(z >= -kSocTolerance && z <= 1.0 + kSocTolerance, ErrorCode::SocOutOfRange,
                    "soc value " + std::to_string(z) + " outside [0, 1]");
        }
    }
}

/// Column mapping for CSV ingestion.
struct CsvSchema {
    std::string time_col = "time_s";
    std::string current_col = "current_a";
    std::string voltage_col = "voltage_v";
    /// Optional SOC column; read when present in the header.
    std::string soc_col = "soc";
    /// Set for loggers that record discharge as positive current.
    bool flip_current_sign = false;
    /// Resample non-uniform logs instead of rejecting them.
    bool resample = false;
    double uniform_rel_tol = 1e-6;
};

namespace detail {

inline std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r\n\"");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n\"");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_fields(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? comma : comma - start)));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

inline double parse_double(std::string_view text, std::size_t line_no)
{
    double value = 0.0;
    // from_chars rejects a leading '+'.
    if (!text.empty() && text.front() == '+') {
        text.remove_prefix(1);
    }
    const auto* begin = text.data();
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end) {
        fail(ErrorCode::ParseError,
             "line " + std::to_string(line_no) + ": cannot parse '" + std::string(text) + "' as a number");
    }
    return value;
}

inline std::string format_double(double value)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

inline bool is_skippable(std::string_view line)
{
    const auto t = trim(line);
    return t.empty() || t.front() == '#';
}

} // namespace detail

/// Raw, possibly non-uniform columns read from a file.
struct RawSeries {
    std::vector<double> time;
    std::vector<double> current;
    std::vector<double> voltage;
    std::optional<std::vector<double>> soc;
};

inline RawSeries read_csv_columns(std::istream& in, const CsvSchema& schema)
{
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string_view> header;
    std::string header_line;
    while (std::getline(in, line)) {
        ++line_no;
        if (!detail::is_skippable(line)) {
            header_line = line;
            header = detail::split_fields(header_line);
            break;
        }
    }
    require(!header.empty(), ErrorCode::EmptyFile, "no header row");

    const auto find_col = [&](const std::string& name) -> std::optional<std::size_t> {
        for (std::size_t k = 0; k < header.size(); ++k) {
            if (header[k] == name) {
                return k;
            }
        }
        return std::nullopt;
    };
    const auto need_col = [&](const std::string& name) {
        const auto idx = find_col(name);
        require(idx.has_value(), ErrorCode::MissingColumn, "column '" + name + "' not found in header");
        return *idx;
    };
    const std::size_t ti = need_col(schema.time_col);
    const std::size_t ii = need_col(schema.current_col);
    const std::size_t vi = need_col(schema.voltage_col);
    const auto zi = schema.soc_col.empty() ? std::nullopt : find_col(schema.soc_col);

    RawSeries raw;
    if (zi) {
        raw.soc.emplace();
    }
    const double sign = schema.flip_current_sign ? -1.0 : 1.0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::is_skippable(line)) {
            continue;
        }
        const auto fields = detail::split_fields(line);
        const std::size_t needed = std::max({ti, ii, vi, zi.value_or(0)}) + 1;
        require(fields.size() >= needed, ErrorCode::ParseError,
                "line " + std::to_string(line_no) + ": expected at least " + std::to_string(needed) + " fields");
        raw.time.push_back(detail::parse_double(fields[ti], line_no));
        raw.current.push_back(sign * detail::parse_double(fields[ii], line_no));
        raw.voltage.push_back(detail::parse_double(fields[vi], line_no));
        if (zi) {
            raw.soc->push_back(detail::parse_double(fields[*zi], line_no));
        }
    }
    require(!raw.time.empty(), ErrorCode::EmptyFile, "no data rows");
    return raw;
}

/// Resample onto t0 + k*ts. Current is zero-order held (the value at the
/// latest sample not after t), voltage and soc are linearly interpolated.
inline SampledRecord resample_uniform(const RawSeries& raw, double ts)
{
    const auto n = raw.time.size();
    require(n >= 2, ErrorCode::InvalidRecord, "need at least 2 samples to resample");
    require(ts > 0.0, ErrorCode::InvalidArgument, "ts must be > 0");
    const double t0 = raw.time.front();
    const auto count = static_cast<Eigen::Index>(std::floor((raw.time.back() - t0) / ts * (1.0 + 1e-12))) + 1;

    SampledRecord rec;
    rec.ts = ts;
    rec.t0 = t0;
    rec.current.resize(count);
    rec.voltage.resize(count);
    if (raw.soc) {
        rec.soc = Eigen::VectorXd(count);
    }
    std::size_t seg = 0;
    for (Eigen::Index k = 0; k < count; ++k) {
        const double t = t0 + static_cast<double>(k) * ts;
        while (seg + 2 < n && raw.time[seg + 1] <= t) {
            ++seg;
        }
        const bool at_next = raw.time[seg + 1] <= t;
        const double span = raw.time[seg + 1] - raw.time[seg];
        const double w = std::clamp((t - raw.time[seg]) / span, 0.0, 1.0);
        rec.current[k] = at_next ? raw.current[seg + 1] : raw.current[seg];
        rec.voltage[k] = (1.0 - w) * raw.voltage[seg] + w * raw.voltage[seg + 1];
        if (raw.soc) {
            (*rec.soc)[k] = (1.0 - w) * (*raw.soc)[seg] + w * (*raw.soc)[seg + 1];
        }
    }
    return rec;
}

inline SampledRecord load_csv(std::istream& in, const CsvSchema& schema = {})
{
    const RawSeries raw = read_csv_columns(in, schema);
    const auto n = raw.time.size();
    for (std::size_t k = 1; k < n; ++k) {
        require(raw.time[k] > raw.time[k - 1], ErrorCode::NonMonotonicTime,
                "timestamps not strictly increasing at data row " + std::to_string(k));
    }
    require(n >= 2, ErrorCode::InvalidRecord, "record needs at least 2 samples");

    std::vector<double> dt(n - 1);
    for (std::size_t k = 1; k < n; ++k) {
        dt[k - 1] = raw.time[k] - raw.time[k - 1];
    }
    const double ts = (raw.time.back() - raw.time.front()) / static_cast<double>(n - 1);
    const bool uniform = std::all_of(dt.begin(), dt.end(), [&](double d) {
        return std::abs(d - ts) <= schema.uniform_rel_tol * ts;
    });

    if (!uniform) {
        require(schema.resample, ErrorCode::NonUniformSampling,
                "timestamps are not uniformly spaced (enable resampling to accept this file)");
        std::vector<double> sorted = dt;
        std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
        SampledRecord rec = resample_uniform(raw, sorted[sorted.size() / 2]);
        validate(rec);
        return rec;
    }

    SampledRecord rec;
    rec.ts = ts;
    rec.t0 = raw.time.front();
    rec.current = Eigen::Map<const Eigen::VectorXd>(raw.current.data(), static_cast<Eigen::Index>(n));
    rec.voltage = Eigen::Map<const Eigen::VectorXd>(raw.voltage.data(), static_cast<Eigen::Index>(n));
    if (raw.soc) {
        rec.soc = Eigen::Map<const Eigen::VectorXd>(raw.soc->data(), static_cast<Eigen::Index>(n));
    }
    validate(rec);
    return rec;
}

inline SampledRecord load_csv(const std::filesystem::path& path, const CsvSchema& schema = {})
{
    std::ifstream in(path);
    require(in.good(), ErrorCode::EmptyFile, "cannot open '" + path.string() + "'");
    return load_csv(in, schema);
}

/// Writes `time_s,current_a,voltage_v[,soc]` using shortest round-trip
/// formatting, so reloading reproduces every value bit-for-bit. Lines in
/// `comments` are emitted first, each prefixed with "# ".
inline void write_csv(std::ostream& out, const SampledRecord& rec, const CsvSchema& schema = {},
                      const std::vector<std::string>& comments = {})
{
    for (const auto& c : comments) {
        out << "# " << c << '\n';
    }
    out << schema.time_col << ',' << schema.current_col << ',' << schema.voltage_col;
    if (rec.soc) {
        out << ',' << schema.soc_col;
    }
    out << '\n';
    const double sign = schema.flip_current_sign ? -1.0 : 1.0;
    for (Eigen::Index j = 0; j < rec.size(); ++j) {
        out << detail::format_double(rec.time(j)) << ',' << detail::format_double(sign * rec.current[j]) << ','
            << detail::format_double(rec.voltage[j]);
        if (rec.soc) {
            out << ',' << detail::format_double((*rec.soc)[j]);
        }
        out << '\n';
    }
}

/// Coulomb counting with the left-rectangle rule, exact for zero-order-held
/// current: soc[j] = z0 + ts/(3600 C) * sum_{k<j} i[k].
/// Values in [-0.01, 0) or (1, 1.01] are clipped to [0, 1]; anything further
/// out raises SocOutOfRange.
inline SampledRecord coulomb_count(const SampledRecord& rec, const BatteryMeta& meta)
{
    validate(meta);
    require(rec.ts > 0.0 && rec.size() >= 1, ErrorCode::InvalidRecord, "record is empty or has ts <= 0");
    SampledRecord out = rec;
    Eigen::VectorXd soc(rec.size());
    const double gain = rec.ts / (3600.0 * meta.capacity_ah);
    double charge = 0.0;
    for (Eigen::Index j = 0; j < rec.size(); ++j) {
        const double z = meta.initial_soc + gain * charge;
        require(z >= -0.01 && z <= 1.01, ErrorCode::SocOutOfRange,
                "integrated soc " + std::to_string(z) + " at sample " + std::to_string(j) +
                    " leaves [-0.01, 1.01]; check capacity, sign convention and initial soc");
        soc[j] = std::clamp(z, 0.0, 1.0);
        charge += rec.current[j];
    }
    out.soc = std::move(soc);
    return out;
}

/// Stable ascending order of samples by soc.
inline std::vector<Eigen::Index> sort_by_soc(const SampledRecord& rec)
{
    require(rec.soc.has_value(), ErrorCode::MissingSoc, "record has no soc column");
    const Eigen::VectorXd& z = *rec.soc;
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(z.size()));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::stable_sort(perm.begin(), perm.end(), [&](Eigen::Index a, Eigen::Index b) { return z[a] < z[b]; });
    return perm;
}

} // namespace ecmid
