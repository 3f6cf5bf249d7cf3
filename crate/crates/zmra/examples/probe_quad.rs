use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zmra::grid::*;
use zmra::shifts::*;

fn main() {
    let spec = GridSpec::new(3, 2, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let k = [1u32, 1, 2];
    let q = ShiftData::random(spec, k, (3, 3), 1, &mut rng).unwrap();
    let key = q.coeffs.keys().next().unwrap();
    println!("top={:?}", key.top.scales());
    println!("I1 ={:?} pos {:?}", key.rects[0].scales(), (key.rects[0].i1.pos, key.rects[0].i2.pos, key.rects[0].i3.pos));
    println!("I2 pos {:?}", (key.rects[1].i1.pos, key.rects[1].i2.pos, key.rects[1].i3.pos));
    println!("I3 pos {:?}", (key.rects[2].i1.pos, key.rects[2].i2.pos, key.rects[2].i3.pos));
    println!("eta={}", key.eta.label());
    let fs = [
        GridFunction::random(spec, &mut rng),
        GridFunction::random(spec, &mut rng),
        GridFunction::random(spec, &mut rng),
    ];
    zmra::shifts::debug_family_a(&q, &fs);
}
