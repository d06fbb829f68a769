#include "padapt/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace padapt {

namespace {

constexpr std::string_view kHeader = "PROMPTADAPT-CKPT v1";
constexpr int kValuesPerLine = 8;

bool plain_token(std::string_view s) {
    if (s.empty()) {
        return false;
    }
    for (const char c : s) {
        if (c == ' ' || c == '\n' || c == '\r' || c == '\t') {
            return false;
        }
    }
    return true;
}

std::string hex_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

double parse_double(const std::string& token, std::string_view origin) {
    const char* begin = token.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    check<IoError>(end != begin && *end == '\0', origin, ": bad numeric token '", token, "'");
    return v;
}

}  // namespace

void Checkpoint::add_meta(std::string key, std::string value) {
    check<IoError>(plain_token(key), "checkpoint meta key must be a plain token, got '", key, "'");
    meta.emplace_back(std::move(key), std::move(value));
}

bool Checkpoint::has_meta(std::string_view key) const {
    for (const auto& [k, v] : meta) {
        if (k == key) {
            return true;
        }
    }
    return false;
}

const std::string& Checkpoint::meta_value(std::string_view key) const {
    for (const auto& [k, v] : meta) {
        if (k == key) {
            return v;
        }
    }
    throw IoError(concat("checkpoint: missing meta key '", key, "'"));
}

bool Checkpoint::has_tensor(std::string_view name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) {
            return true;
        }
    }
    return false;
}

const Tensor& Checkpoint::tensor(std::string_view name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) {
            return t;
        }
    }
    throw IoError(concat("checkpoint: missing tensor '", name, "'"));
}

void Checkpoint::add_tensor(std::string name, Tensor t) {
    check<IoError>(plain_token(name), "checkpoint tensor name must be a plain token, got '", name, "'");
    tensors.emplace_back(std::move(name), std::move(t));
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

std::string fnv1a64_hex(std::string_view bytes) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string out;
    out.reserve(1024);
    out += kHeader;
    out += '\n';
    for (const auto& [key, value] : ckpt.meta) {
        out += "meta ";
        out += key;
        out += ' ';
        out += value;
        out += '\n';
    }
    for (const auto& [name, tensor] : ckpt.tensors) {
        out += "tensor ";
        out += name;
        out += ' ';
        out += std::to_string(tensor.rank());
        for (const int extent : tensor.shape()) {
            out += ' ';
            out += std::to_string(extent);
        }
        out += '\n';
        const std::int64_t n = tensor.size();
        for (std::int64_t i = 0; i < n; ++i) {
            out += hex_double(tensor[i]);
            out += (i % kValuesPerLine == kValuesPerLine - 1 || i == n - 1) ? '\n' : ' ';
        }
    }
    const std::string digest = fnv1a64_hex(out);  // over the body only
    out += "checksum fnv1a64 ";
    out += digest;
    out += '\n';
    return out;
}

Checkpoint parse_checkpoint(std::string_view bytes, std::string_view origin) {
    // Split off and verify the trailing checksum line first.
    check<IoError>(!bytes.empty() && bytes.back() == '\n', origin, ": truncated checkpoint (no final newline)");
    const std::size_t last_line_start = bytes.rfind('\n', bytes.size() - 2);
    check<IoError>(last_line_start != std::string_view::npos, origin, ": truncated checkpoint");
    const std::string_view body = bytes.substr(0, last_line_start + 1);
    std::string last_line(bytes.substr(last_line_start + 1, bytes.size() - last_line_start - 2));
    {
        std::istringstream ls(last_line);
        std::string word, algo, digest;
        ls >> word >> algo >> digest;
        check<IoError>(word == "checksum" && algo == "fnv1a64", origin,
                       ": missing checksum trailer, got '", last_line, "'");
        const std::string expect = fnv1a64_hex(body);
        check<IoError>(digest == expect, origin, ": checksum mismatch (file ", digest, ", computed ",
                       expect, ")");
    }

    std::istringstream in{std::string(body)};
    std::string line;
    check<IoError>(static_cast<bool>(std::getline(in, line)), origin, ": empty checkpoint");
    check<IoError>(line == kHeader, origin, ": unsupported header '", line, "' (expected '", kHeader, "')");

    Checkpoint ckpt;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "meta") {
            std::string key;
            ls >> key;
            check<IoError>(!key.empty(), origin, ": meta line without key");
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') {
                value.erase(value.begin());
            }
            ckpt.meta.emplace_back(std::move(key), std::move(value));
        } else if (kind == "tensor") {
            std::string name;
            int rank = -1;
            ls >> name >> rank;
            check<IoError>(!name.empty() && rank >= 0, origin, ": malformed tensor line '", line, "'");
            Shape shape(static_cast<std::size_t>(rank));
            for (int i = 0; i < rank; ++i) {
                check<IoError>(static_cast<bool>(ls >> shape[static_cast<std::size_t>(i)]), origin,
                               ": malformed tensor shape in '", line, "'");
            }
            const std::int64_t count = numel(shape);
            std::vector<double> values;
            values.reserve(static_cast<std::size_t>(count));
            while (static_cast<std::int64_t>(values.size()) < count) {
                std::string data_line;
                check<IoError>(static_cast<bool>(std::getline(in, data_line)), origin,
                               ": truncated tensor '", name, "' (got ", values.size(), " of ", count,
                               " values)");
                std::istringstream ds(data_line);
                std::string token;
                while (ds >> token) {
                    values.push_back(parse_double(token, origin));
                }
            }
            check<IoError>(static_cast<std::int64_t>(values.size()) == count, origin, ": tensor '", name,
                           "' has ", values.size(), " values, expected ", count);
            ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
        } else {
            throw IoError(concat(origin, ": unexpected line '", line, "'"));
        }
    }
    return ckpt;
}

void write_checkpoint_file(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    check<IoError>(out.good(), "cannot open '", path.string(), "' for writing");
    const std::string bytes = serialize_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    check<IoError>(out.good(), "failed writing '", path.string(), "'");
}

Checkpoint read_checkpoint_file(const std::filesystem::path& path) {
    return parse_checkpoint(read_file_bytes(path), path.string());
}

std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    check<MissingArtifactError>(in.good(), "cannot open '", path.string(), "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string file_checksum_hex(const std::filesystem::path& path) {
    return fnv1a64_hex(read_file_bytes(path));
}

}  // namespace padapt
