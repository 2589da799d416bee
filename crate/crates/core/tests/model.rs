use nalgebra::Vector3;
use splatloc::field::{DescriptorField, EncodingConfig, FieldConfig};
use splatloc::model::{read_model, write_model, ModelError, ModelSize};
use splatloc::scene::{GaussianPrimitive, SceneBounds, SceneModel};

fn scene(n: usize, dim: usize) -> SceneModel {
    let bounds = SceneBounds::new(Vector3::repeat(-2.0), Vector3::repeat(2.0));
    let mut s = SceneModel::new(bounds, 0).unwrap();
    for i in 0..n {
        let t = (i as f64 * 0.618_033_988_75).fract();
        let mut p = GaussianPrimitive::new(
            Vector3::new(3.0 * t - 1.5, 1.0 - 2.0 * t, (7.0 * t).sin()),
            0.005 + 0.02 * t,
            0.1 + 0.8 * t,
            Vector3::new(t, 1.0 - t, 0.25),
        );
        p.is_key = i % 4 == 0;
        p.spawn_score = t;
        p.log_scale = Vector3::new(-4.0 - t, -4.5, -5.0 + t);
        s.push(p).unwrap();
    }
    let cfg = FieldConfig {
        encoding: EncodingConfig {
            log2_table_size: 12,
            ..EncodingConfig::default()
        },
        hidden: 32,
        descriptor_dim: dim,
        ..FieldConfig::default()
    };
    s.descriptor_field = Some(DescriptorField::new(&cfg, bounds).unwrap());
    s
}

fn size_of(s: &SceneModel) -> (ModelSize, Vec<u8>) {
    let mut buf = Vec::new();
    let size = write_model(s, &mut buf).unwrap();
    assert_eq!(size.total, buf.len());
    (size, buf)
}

#[test]
fn thousand_primitive_round_trip_is_bit_exact() {
    let s = scene(1000, 64);
    let (_, buf) = size_of(&s);
    let back = read_model(&mut buf.as_slice()).unwrap();
    assert_eq!(back.primitives(), s.primitives());
    assert_eq!(back.descriptor_field, s.descriptor_field);
    assert_eq!(back.bounds, s.bounds);
    assert_eq!(back.sh_degree(), s.sh_degree());
}

#[test]
fn size_is_linear_in_primitives_and_free_of_descriptors() {
    let (a, _) = size_of(&scene(1000, 64));
    let (b, _) = size_of(&scene(10_000, 64));
    // The primitive section is a count plus fixed-length records.
    let per_prim = (b.primitives - a.primitives) / 9000;
    assert_eq!(b.primitives - a.primitives, 9000 * per_prim);
    assert_eq!(a.primitives, 12 + 8 + 1000 * per_prim);
    assert_eq!(b.total - b.primitives, a.total - a.primitives);

    let (c, _) = size_of(&scene(1000, 256));
    assert_eq!(c.total - c.field, a.total - a.field);
    // Only the decoder's output layer grows with the descriptor dimension.
    assert_eq!(c.field - a.field, 8 * (32 + 1) * (256 - 64));
}

#[test]
fn every_truncation_is_reported_as_corrupt() {
    let (_, buf) = size_of(&scene(30, 16));
    for cut in (0..buf.len()).step_by(97) {
        match read_model(&mut &buf[..cut]) {
            Err(ModelError::CorruptModel { offset, .. }) => assert!(offset <= cut),
            other => panic!("cut {cut}: {other:?}"),
        }
    }
}
