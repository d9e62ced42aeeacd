//! Random-hyperplane binary codes: normalized Hamming distance tracks the
//! angle between vectors.

use qxdb::quantization::{bq_encode, bq_train, hamming_distance};

fn main() -> qxdb::Result<()> {
    let planes = bq_train(2, 4096, 11)?;
    let base = bq_encode(&[1.0, 0.0], &planes)?;
    for deg in [0.0f32, 30.0, 45.0, 90.0, 135.0, 180.0] {
        let t = deg.to_radians();
        let code = bq_encode(&[t.cos(), t.sin()], &planes)?;
        let h = hamming_distance(&base, &code)? as f32 / planes.m() as f32;
        println!("angle {deg:>5.1} deg  hamming/m {h:.3}  angle/pi {:.3}", t / std::f32::consts::PI);
    }
    Ok(())
}
