fn main() {
    // lapack-sys and cblas-sys declare the FFI symbols but link nothing;
    // the system OpenBLAS provides both BLAS and LAPACK.
    println!("cargo:rustc-link-search=native=/usr/lib/x86_64-linux-gnu/openblas-pthread");
    println!("cargo:rustc-link-lib=dylib=openblas");
}
