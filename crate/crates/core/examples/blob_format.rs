//! Writes an embedding blob, inspects its header and shows the typed errors
//! for corrupted input.
use cofuse::data::blob::read_header;
use cofuse::data::{read_blob, write_blob, Dtype};
use cofuse::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t = Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-3, 7.0])?;
    let bytes = write_blob(&t, Dtype::F64)?;
    let h = read_header(&bytes)?;
    println!("header {} bytes, payload {} bytes, dims {:?}", h.header_len(), h.payload_len(), h.dims);
    assert_eq!(read_blob(&bytes)?, t);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    println!("corrupt magic: {}", read_blob(&bad).unwrap_err());
    println!("truncated: {}", read_blob(&bytes[..30]).unwrap_err());

    let small = write_blob(&t, Dtype::F32)?;
    println!("f32 storage: {} bytes vs {} for f64", small.len(), bytes.len());
    Ok(())
}
