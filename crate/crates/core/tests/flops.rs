use ssb_core::flops::{count, Convention, SamplerCost};
use ssb_core::network::NetworkSpec;

fn macs(spec: &NetworkSpec, input: usize, cost: SamplerCost) -> u64 {
    count(spec, (input, input), Convention::OneMac, cost).unwrap().total_macs()
}

#[test]
fn resnet_d50_is_about_4_3_giga_macs() {
    let m = macs(&NetworkSpec::resnet_d50(), 224, SamplerCost::Dense) as f64;
    eprintln!("resnet-d-50: {:.4} GMACs", m / 1e9);
    assert!((m / 4.3e9 - 1.0).abs() < 0.10);
}

#[test]
fn ssb_ratio_near_seventy_percent() {
    let base = macs(&NetworkSpec::resnet_d50(), 224, SamplerCost::Dense) as f64;
    for cost in [SamplerCost::Dense, SamplerCost::Sparse] {
        let ssb = macs(&NetworkSpec::ssb_resnet_d50([16, 8, 4]), 224, cost) as f64;
        eprintln!("ssb {cost:?}: {:.4} GMACs ratio {:.4}", ssb / 1e9, ssb / base);
        assert!((ssb / base - 0.70).abs() <= 0.05);
    }
}

#[test]
fn ratios_do_not_depend_on_convention() {
    let a = NetworkSpec::resnet_d50();
    let b = NetworkSpec::ssb_resnet_d50([16, 8, 4]);
    let r = |c| {
        count(&b, (224, 224), c, SamplerCost::Dense).unwrap().total_flops() as f64
            / count(&a, (224, 224), c, SamplerCost::Dense).unwrap().total_flops() as f64
    };
    assert_eq!(r(Convention::OneMac), r(Convention::TwoMac));
}

#[test]
fn saliency_head_is_a_small_share() {
    let r = count(&NetworkSpec::ssb_resnet_d50([16, 8, 4]), (224, 224), Convention::OneMac, SamplerCost::Dense).unwrap();
    let head: u64 = r.rows.iter().filter(|x| x.name.contains(".saliency.")).map(|x| x.macs).sum();
    assert!((head as f64) < 0.01 * r.total_macs() as f64);
}

#[test]
fn sparse_costing_never_exceeds_dense() {
    let spec = NetworkSpec::ssb_resnet_d50([16, 8, 4]);
    assert!(macs(&spec, 224, SamplerCost::Sparse) <= macs(&spec, 224, SamplerCost::Dense));
}
