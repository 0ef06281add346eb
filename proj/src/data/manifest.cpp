#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "msfpt/data.hpp"
#include "msfpt/binary_io.hpp"

namespace msfpt {

namespace {

std::string row_prefix(std::size_t row) { return "row " + std::to_string(row) + ": "; }

// One CSV record. Fields may be double-quoted; "" inside quotes is a quote.
std::vector<std::string> split_record(std::string_view line, std::size_t row) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    fields.back() += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                fields.back() += c;
            }
        } else if (c == '"' && fields.back().empty()) {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else {
            fields.back() += c;
        }
    }
    if (quoted) throw ParseError(row_prefix(row) + "unterminated quote");
    return fields;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

double parse_mos(std::string_view text, std::size_t row) {
    const std::string_view s = trim(text);
    double v = 0.0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || end != s.data() + s.size()) {
        throw ParseError(row_prefix(row) + "mos '" + std::string(s) + "' is not a number");
    }
    if (!std::isfinite(v)) throw ParseError(row_prefix(row) + "mos must be finite");
    return v;
}

std::string quote_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

}  // namespace

Manifest parse_manifest(std::string_view text, const fs::path& root, bool check_files) {
    if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
    Manifest m;
    m.root = root;
    bool header_seen = false;
    std::size_t row = 0;
    while (!text.empty()) {
        const std::size_t nl = text.find('\n');
        const std::string_view line = trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++row;
        if (line.empty()) continue;
        const auto fields = split_record(line, row);
        if (!header_seen) {
            if (fields.size() != 3 || trim(fields[0]) != "ref_path" || trim(fields[1]) != "dist_path" ||
                trim(fields[2]) != "mos") {
                throw ParseError(row_prefix(row) + "expected header 'ref_path,dist_path,mos'");
            }
            header_seen = true;
            continue;
        }
        if (fields.size() != 3) {
            throw ParseError(row_prefix(row) + "expected 3 fields, got " + std::to_string(fields.size()));
        }
        ManifestRow r;
        r.row = row;
        r.mos = parse_mos(fields[2], row);
        for (int k = 0; k < 2; ++k) {
            const fs::path p(std::string(trim(fields[k])));
            if (p.empty()) throw ParseError(row_prefix(row) + "empty path");
            const fs::path resolved = p.is_absolute() ? p : root / p;
            if (check_files && !fs::is_regular_file(resolved)) {
                throw IoError(row_prefix(row) + "no such file '" + resolved.string() + "'");
            }
            (k == 0 ? r.ref_path : r.dist_path) = resolved.lexically_normal();
        }
        m.rows.push_back(std::move(r));
    }
    if (!header_seen) throw ParseError("manifest is missing the 'ref_path,dist_path,mos' header");
    if (m.rows.empty()) throw ParseError("manifest has no rows");
    return m;
}

Manifest load_manifest(const fs::path& path) {
    const auto bytes = read_file(path);
    const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    fs::path root = path.parent_path();
    if (root.empty()) root = ".";
    return parse_manifest(text, root, true);
}

void save_manifest(const fs::path& path, const std::vector<ManifestRow>& rows) {
    fs::path root = path.parent_path();
    if (root.empty()) root = ".";
    const auto rel = [&](const fs::path& p) {
        const fs::path r = p.lexically_relative(root);
        return (r.empty() || *r.begin() == "..") ? p.string() : r.string();
    };
    std::ostringstream out;
    out.precision(17);
    out << "ref_path,dist_path,mos\n";
    for (const auto& r : rows) {
        out << quote_field(rel(r.ref_path)) << ',' << quote_field(rel(r.dist_path)) << ',' << r.mos << '\n';
    }
    const std::string s = out.str();
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

}  // namespace msfpt
