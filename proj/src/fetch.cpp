#include <openssl/evp.h>

#include <httplib.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bench/data.hpp"

namespace bench {

namespace fs = std::filesystem;

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& p, const std::string& bytes) {
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw FetchError("failed to write " + tmp.string());
    }
    fs::rename(tmp, p);
}

// scheme://host[:port] and path split for httplib
std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw FetchError("malformed URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

std::string fetch_dataset(const std::string& url, const std::string& cache_dir) {
    const fs::path dir = fs::path(cache_dir) / sha256_hex(url);
    const fs::path data = dir / "data.csv";
    const fs::path checksum = dir / "sha256";

    if (fs::exists(data) && fs::exists(checksum)) {
        const std::string content = read_file(data);
        std::string expected = read_file(checksum);
        while (!expected.empty() && (expected.back() == '\n' || expected.back() == '\r'))
            expected.pop_back();
        if (sha256_hex(content) == expected) return data.string();
    }

    auto [base, path] = split_url(url);
    httplib::Client client(base);
    client.set_follow_location(true);
    client.set_connection_timeout(30);
    client.set_read_timeout(120);
    auto res = client.Get(path);
    if (!res || res->status != 200)
        throw FetchError("fetch failed for " + url +
                         (res ? " (status " + std::to_string(res->status) + ")"
                              : " (no response)"));

    fs::create_directories(dir);
    write_file_atomic(data, res->body);
    write_file_atomic(checksum, sha256_hex(res->body) + "\n");
    return data.string();
}

}  // namespace bench
