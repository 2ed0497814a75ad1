#include "mppbsde/io.hpp"

#include <array>
#include <charconv>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "mppbsde/errors.hpp"

namespace mppbsde {

std::string format_double(double x) {
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x, std::chars_format::general, 17);
    return std::string(buf.data(), res.ptr);
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    for (const auto& h : header) {
        *this << h;
    }
    end_row();
}

void CsvWriter::separator() {
    if (row_started_) {
        out_ << ',';
    }
    row_started_ = true;
}

CsvWriter& CsvWriter::operator<<(double x) {
    separator();
    out_ << format_double(x);
    return *this;
}

CsvWriter& CsvWriter::operator<<(long long x) {
    separator();
    out_ << x;
    return *this;
}

CsvWriter& CsvWriter::operator<<(const std::string& s) {
    separator();
    if (s.find_first_of(",\"\n") != std::string::npos) {
        out_ << '"';
        for (char c : s) {
            if (c == '"') {
                out_ << '"';
            }
            out_ << c;
        }
        out_ << '"';
    } else {
        out_ << s;
    }
    return *this;
}

void CsvWriter::end_row() {
    out_ << '\n';
    row_started_ = false;
}

std::string sha256_hex(const std::string& bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    std::ostringstream hex;
    for (unsigned int k = 0; k < len; ++k) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[k]);
    }
    return hex.str();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read '" + path.string() + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return sha256_hex(buf.str());
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    out << doc.dump(2) << '\n';
}

void write_value_field(const std::filesystem::path& path, const ValueField& field) {
    const std::size_t marks = field.model->marks();
    std::vector<std::string> header{"layer_time"};
    for (std::size_t e = 0; e < marks; ++e) {
        header.push_back("n" + std::to_string(e + 1));
    }
    header.emplace_back("y");
    for (std::size_t e = 0; e < marks; ++e) {
        header.push_back("u" + std::to_string(e + 1));
    }
    CsvWriter csv(path, header);
    const auto& grid = field.grid();
    for (std::size_t i = 0; i <= grid.steps(); ++i) {
        for (std::size_t s = 0; s < field.model->states(); ++s) {
            csv << grid.time(i);
            for (int c : field.lattice().counts(s)) {
                csv << static_cast<long long>(c);
            }
            csv << field.y_at(i, s);
            for (double u : field.u_at(i, s)) {
                csv << u;
            }
            csv.end_row();
        }
    }
}

void write_reflection(const std::filesystem::path& path, const ReflectedSolution& sol) {
    CsvWriter csv(path, {"t", "K", "R", "L", "margin"});
    const auto& grid = sol.Y_field.grid();
    for (std::size_t i = 0; i < sol.K.size(); ++i) {
        csv << grid.time(i) << sol.K[i] << sol.R[i] << sol.L[i] << sol.margins[i];
        csv.end_row();
    }
}

nlohmann::json residual_json(const ResidualStats& stats) {
    return {{"mean", stats.mean},
            {"mean_abs", stats.mean_abs},
            {"max_abs", stats.max_abs},
            {"stddev", stats.stddev},
            {"M", stats.paths},
            {"grid_N", stats.grid_steps}};
}

void RunManifest::add_file(const std::filesystem::path& out_dir, const std::string& name) {
    files.emplace_back(name, sha256_file(out_dir / name));
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json doc;
    doc["command"] = command;
    doc["scenario_hash"] = scenario_hash;
    doc["tool_version"] = tool_version;
    doc["seeds"] = seeds;
    doc["files"] = nlohmann::json::array();
    for (const auto& [name, digest] : files) {
        doc["files"].push_back({{"path", name}, {"sha256", digest}});
    }
    doc["wall_clock_seconds"] = wall_clock;
    doc["summary"] = summary;
    doc["exit_code"] = exit_code;
    return doc;
}

const char* tool_version() {
    return "0.1.0";
}

} // namespace mppbsde
