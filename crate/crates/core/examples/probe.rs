use dcsteer::penalty::{collect_bundle, majorant_oracle};
use dcsteer::problems::toy_eq;
use dcsteer::subsolver::{minimize, SubsolveConfig};
use nalgebra::dvector;

fn main() {
    let p = toy_eq();
    let s = 0.747666;
    let x = dvector![s, s];
    let b = collect_bundle(&p, &x).unwrap();
    let q = majorant_oracle(&p, 100.0, &b).unwrap();
    let cfg = SubsolveConfig { max_oracle_calls: 400, ..Default::default() };
    let r = minimize(&q, &p.set, &x, &cfg).unwrap();
    println!("-> {:?} val={:.9} gap={:.3e} calls={}", r.status, r.value, r.gap, r.oracle_calls);
}
