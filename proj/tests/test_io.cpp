#include "csiloc/io.hpp"

#include <gtest/gtest.h>

#include <cstdint>
#include <fstream>

#include "csiloc/rng.hpp"
#include "test_util.hpp"

using namespace csiloc;
using testutil::TempDir;

namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<std::size_t> shape, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<T>(rng.uniform(-100.0, 100.0));
    return t;
}

std::vector<char> file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST(Csit, RoundTripFloat) {
    TempDir dir("csit");
    Rng rng(1);
    for (auto shape : std::vector<std::vector<std::size_t>>{
             {1}, {7}, {3, 4}, {2, 3, 4}, {2, 1, 5, 3}, {2, 2, 2, 2, 2, 2, 2, 2}}) {
        Tensor<float> t = random_tensor<float>(shape, rng);
        save_csit(dir.str("t.csit"), t);
        Tensor<float> back = load_csit<float>(dir.str("t.csit"));
        EXPECT_EQ(back.shape(), t.shape());
        EXPECT_EQ(back.values(), t.values()); // bit-exact
    }
}

TEST(Csit, RoundTripDouble) {
    TempDir dir("csit");
    Rng rng(2);
    Tensor<double> t = random_tensor<double>({5, 6}, rng);
    t[0] = 1.0 / 3.0; // not representable in float
    save_csit(dir.str("t.csit"), t);
    Tensor<double> back = load_csit<double>(dir.str("t.csit"));
    EXPECT_EQ(back.values(), t.values());
}

TEST(Csit, CrossDtypeLoadConverts) {
    TempDir dir("csit");
    Tensor<float> tf({3}, {1.5f, -2.25f, 8.0f});
    save_csit(dir.str("f.csit"), tf);
    Tensor<double> asd = load_csit<double>(dir.str("f.csit"));
    EXPECT_EQ(asd[1], -2.25);

    Tensor<double> td({2}, {0.5, -4.0});
    save_csit(dir.str("d.csit"), td);
    Tensor<float> asf = load_csit<float>(dir.str("d.csit"));
    EXPECT_EQ(asf[1], -4.0f);
}

TEST(Csit, HeaderLayout) {
    TempDir dir("csit");
    Tensor<float> t({2, 3}, {0, 1, 2, 3, 4, 5});
    save_csit(dir.str("t.csit"), t);
    auto bytes = file_bytes(dir.str("t.csit"));
    ASSERT_EQ(bytes.size(), 4u + 1 + 1 + 1 + 2 * 8 + 6 * 4);
    EXPECT_EQ(std::string(bytes.data(), 4), "CSIT");
    EXPECT_EQ(bytes[4], 1); // version
    EXPECT_EQ(bytes[5], 0); // dtype f32
    EXPECT_EQ(bytes[6], 2); // rank
    EXPECT_EQ(static_cast<std::uint8_t>(bytes[7]), 2u); // extent 0, little-endian
    EXPECT_EQ(static_cast<std::uint8_t>(bytes[15]), 3u); // extent 1
}

TEST(Csit, MissingFile) {
    EXPECT_THROW(load_csit<float>("/nonexistent/nowhere.csit"), FormatError);
}

TEST(Csit, RejectsBadMagic) {
    TempDir dir("csit");
    save_csit(dir.str("t.csit"), Tensor<float>({2}, {1, 2}));
    auto bytes = file_bytes(dir.str("t.csit"));
    bytes[0] = 'X';
    write_bytes(dir.str("bad.csit"), bytes);
    try {
        load_csit<float>(dir.str("bad.csit"));
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("(byte 0)"), std::string::npos);
    }
}

TEST(Csit, RejectsBadVersion) {
    TempDir dir("csit");
    save_csit(dir.str("t.csit"), Tensor<float>({2}, {1, 2}));
    auto bytes = file_bytes(dir.str("t.csit"));
    bytes[4] = 9;
    write_bytes(dir.str("bad.csit"), bytes);
    try {
        load_csit<float>(dir.str("bad.csit"));
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("(byte 4)"), std::string::npos);
    }
}

TEST(Csit, RejectsBadDtypeAndRank) {
    TempDir dir("csit");
    save_csit(dir.str("t.csit"), Tensor<float>({2}, {1, 2}));
    auto good = file_bytes(dir.str("t.csit"));

    auto bytes = good;
    bytes[5] = 7;
    write_bytes(dir.str("bad.csit"), bytes);
    try {
        load_csit<float>(dir.str("bad.csit"));
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("(byte 5)"), std::string::npos);
    }

    bytes = good;
    bytes[6] = 0;
    write_bytes(dir.str("bad.csit"), bytes);
    EXPECT_THROW(load_csit<float>(dir.str("bad.csit")), FormatError);
    bytes[6] = 9; // > max rank 8; also leaves the header short, still an error
    write_bytes(dir.str("bad.csit"), bytes);
    EXPECT_THROW(load_csit<float>(dir.str("bad.csit")), FormatError);
}

TEST(Csit, RejectsZeroExtent) {
    TempDir dir("csit");
    save_csit(dir.str("t.csit"), Tensor<float>({2, 3}, {0, 1, 2, 3, 4, 5}));
    auto bytes = file_bytes(dir.str("t.csit"));
    for (int i = 0; i < 8; ++i) bytes[7 + i] = 0; // extent 0 -> 0
    write_bytes(dir.str("bad.csit"), bytes);
    try {
        load_csit<float>(dir.str("bad.csit"));
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("zero extent"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("(byte 7)"), std::string::npos);
    }
}

TEST(Csit, RejectsHugeExtentProduct) {
    TempDir dir("csit");
    save_csit(dir.str("t.csit"), Tensor<float>({2, 2}, {0, 1, 2, 3}));
    auto bytes = file_bytes(dir.str("t.csit"));
    bytes[7 + 5] = 0x7f; // extent 0 -> enormous
    write_bytes(dir.str("bad.csit"), bytes);
    try {
        load_csit<float>(dir.str("bad.csit"));
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("overflow"), std::string::npos);
    }
}

TEST(Csit, RejectsTruncatedPayload) {
    TempDir dir("csit");
    save_csit(dir.str("t.csit"), Tensor<float>({4}, {1, 2, 3, 4}));
    auto bytes = file_bytes(dir.str("t.csit"));
    bytes.resize(bytes.size() - 5);
    write_bytes(dir.str("bad.csit"), bytes);
    try {
        load_csit<float>(dir.str("bad.csit"));
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    }
}

TEST(Csit, RejectsTruncatedHeader) {
    TempDir dir("csit");
    save_csit(dir.str("t.csit"), Tensor<float>({4}, {1, 2, 3, 4}));
    auto bytes = file_bytes(dir.str("t.csit"));
    bytes.resize(6); // cut inside the header
    write_bytes(dir.str("bad.csit"), bytes);
    EXPECT_THROW(load_csit<float>(dir.str("bad.csit")), FormatError);
}

TEST(Csit, RejectsTrailingBytes) {
    TempDir dir("csit");
    save_csit(dir.str("t.csit"), Tensor<float>({2}, {1, 2}));
    auto bytes = file_bytes(dir.str("t.csit"));
    bytes.push_back('z');
    write_bytes(dir.str("bad.csit"), bytes);
    try {
        load_csit<float>(dir.str("bad.csit"));
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("trailing"), std::string::npos);
    }
}

TEST(PositionsCsv, RoundTripExact) {
    TempDir dir("csv");
    Rng rng(3);
    Tensor<float> pos({17, 3});
    for (std::size_t i = 0; i < pos.size(); ++i)
        pos[i] = static_cast<float>(rng.uniform(-1000.0, 1000.0));
    pos[0] = 0.1f; // needs full precision to survive the trip
    save_positions_csv(dir.str("p.csv"), pos);
    Tensor<float> back = load_positions_csv<float>(dir.str("p.csv"));
    EXPECT_EQ(back.shape(), pos.shape());
    EXPECT_EQ(back.values(), pos.values());
}

TEST(PositionsCsv, HeaderRequired) {
    TempDir dir("csv");
    std::ofstream(dir.str("p.csv")) << "a,b,c\n1,2,3\n";
    try {
        load_positions_csv<float>(dir.str("p.csv"));
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(":1:"), std::string::npos);
    }
}

TEST(PositionsCsv, BadRowNamesLine) {
    TempDir dir("csv");
    std::ofstream(dir.str("p.csv")) << "x,y,z\n1,2,3\n4,notanumber,6\n";
    try {
        load_positions_csv<float>(dir.str("p.csv"));
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos);
    }
}

TEST(PositionsCsv, RejectsNonFinite) {
    TempDir dir("csv");
    std::ofstream(dir.str("p.csv")) << "x,y,z\n1,inf,3\n";
    EXPECT_THROW(load_positions_csv<float>(dir.str("p.csv")), FormatError);
}

TEST(PositionsCsv, RejectsShortRow) {
    TempDir dir("csv");
    std::ofstream(dir.str("p.csv")) << "x,y,z\n1,2\n";
    EXPECT_THROW(load_positions_csv<float>(dir.str("p.csv")), FormatError);
}

TEST(PositionsCsv, RejectsEmptyAndBlankInterior) {
    TempDir dir("csv");
    std::ofstream(dir.str("empty.csv")) << "";
    EXPECT_THROW(load_positions_csv<float>(dir.str("empty.csv")), FormatError);

    std::ofstream(dir.str("hdr.csv")) << "x,y,z\n";
    EXPECT_THROW(load_positions_csv<float>(dir.str("hdr.csv")), FormatError);

    std::ofstream(dir.str("blank.csv")) << "x,y,z\n1,2,3\n\n4,5,6\n";
    EXPECT_THROW(load_positions_csv<float>(dir.str("blank.csv")), FormatError);

    // final newline only is fine
    std::ofstream(dir.str("ok.csv")) << "x,y,z\n1,2,3\n";
    EXPECT_NO_THROW(load_positions_csv<float>(dir.str("ok.csv")));
}

TEST(TextFile, RoundTrip) {
    TempDir dir("txt");
    write_text_file(dir.str("a.txt"), "hello\nworld\n");
    EXPECT_EQ(read_text_file(dir.str("a.txt")), "hello\nworld\n");
}
