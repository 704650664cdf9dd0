use jointdiff::degradation::{reflect_g, reflect_t, transmission_from_depth, AtmosphericLight};
use jointdiff::diffusion::{ddim_step, timestep_subsequence, NoiseSchedule};
use jointdiff::nn::{modulate, time_embedding};
use jointdiff::objectives::{psnr, ssim};
use jointdiff::{DegMask, DepthMap, ImageF, TransmissionMap};
use ndarray::{Array3, Array4};
use proptest::prelude::*;

const H: usize = 5;
const W: usize = 4;

fn image() -> impl Strategy<Value = ImageF> {
    prop::collection::vec(0.0f32..=1.0, H * W * 3).prop_map(|d| ImageF::new(H, W, 3, d).unwrap())
}

fn unit_field() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(0.0f32..=1.0, H * W)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mask_compositor_stays_between_pixel_and_light(a in image(), b in unit_field(), light in 0.0f32..=1.0) {
        let m = DegMask::new(H, W, b).unwrap();
        let out = reflect_g(&a, &m, AtmosphericLight::Uniform(light)).unwrap();
        for (o, x) in out.data().iter().zip(a.data()) {
            prop_assert!((0.0..=1.0).contains(o));
            prop_assert!(*o >= x.min(light) - 1e-6 && *o <= x.max(light) + 1e-6);
        }
    }

    #[test]
    fn transmission_compositor_stays_between_pixel_and_light(a in image(), t in prop::collection::vec(1e-6f32..=1.0, H * W), light in 0.0f32..=1.0) {
        let tm = TransmissionMap::new(H, W, t).unwrap();
        let out = reflect_t(&a, &tm, AtmosphericLight::Uniform(light)).unwrap();
        for (o, x) in out.data().iter().zip(a.data()) {
            prop_assert!(*o >= x.min(light) - 1e-6 && *o <= x.max(light) + 1e-6);
        }
    }

    #[test]
    fn compositor_identities_hold_bitwise(a in image(), light in 0.0f32..=1.0) {
        let l = AtmosphericLight::Uniform(light);
        prop_assert_eq!(&reflect_g(&a, &DegMask::zeros(H, W), l).unwrap(), &a);
        prop_assert!(reflect_g(&a, &DegMask::ones(H, W), l).unwrap().data().iter().all(|v| *v == light));
        let t1 = TransmissionMap::new(H, W, vec![1.0; H * W]).unwrap();
        prop_assert_eq!(&reflect_t(&a, &t1, l).unwrap(), &a);
    }

    #[test]
    fn transmission_is_monotone_in_depth_and_density(d in unit_field(), extra in unit_field(), beta in 0.01f32..3.0, dbeta in 0.0f32..1.0) {
        let d2: Vec<f32> = d.iter().zip(&extra).map(|(a, b)| a + b).collect();
        let t1 = transmission_from_depth(&DepthMap::new(H, W, d.clone()).unwrap(), beta).unwrap();
        let t2 = transmission_from_depth(&DepthMap::new(H, W, d2).unwrap(), beta).unwrap();
        let t3 = transmission_from_depth(&DepthMap::new(H, W, d).unwrap(), beta + dbeta).unwrap();
        for ((a, b), c) in t1.values().iter().zip(t2.values()).zip(t3.values()) {
            prop_assert!(*a > 0.0 && *a <= 1.0);
            prop_assert!(b <= a && c <= a);
        }
    }

    #[test]
    fn ddim_step_to_itself_is_the_identity(vals in prop::collection::vec(-3.0f32..3.0, 12), eps in prop::collection::vec(-3.0f32..3.0, 12), t in 1usize..=1000) {
        let s = NoiseSchedule::default_linear();
        let x = Array3::from_shape_vec((3, 2, 2), vals).unwrap();
        let e = Array3::from_shape_vec((3, 2, 2), eps).unwrap();
        prop_assert_eq!(ddim_step(&x, t, t, &e, &s).unwrap(), x);
    }

    #[test]
    fn subsequence_visits_decreasing_steps(steps in 1usize..=1000) {
        let (first, _) = timestep_subsequence(1000, steps, steps).unwrap();
        prop_assert_eq!(first, (steps - 1) * 1000 / steps + 1);
        let (_, last) = timestep_subsequence(1000, steps, 1).unwrap();
        prop_assert_eq!(last, 0);
        for i in 1..=steps {
            let (t, tn) = timestep_subsequence(1000, steps, i).unwrap();
            prop_assert!(tn < t && t <= 1000);
        }
    }

    #[test]
    fn linear_schedule_is_consistent(steps in 1usize..400, start in 1e-5f64..0.01, span in 0.0f64..0.5) {
        let s = NoiseSchedule::linear(steps, start, start + span).unwrap();
        for t in 1..=steps {
            let ratio = s.alpha_bar(t) / s.alpha_bar(t - 1);
            prop_assert!(((ratio - s.alpha(t)) / s.alpha(t)).abs() <= 1e-12);
            if t > 1 {
                prop_assert!(s.beta(t) >= s.beta(t - 1));
            }
        }
    }

    #[test]
    fn modulation_endpoints_are_exact(fi in prop::collection::vec(-5.0f32..5.0, 8), fo in prop::collection::vec(-5.0f32..5.0, 8)) {
        let fi = Array4::from_shape_vec((1, 2, 2, 2), fi).unwrap();
        let fo = Array4::from_shape_vec((1, 2, 2, 2), fo).unwrap();
        let zero = Array4::zeros((1, 1, 2, 2));
        let one = Array4::ones((1, 1, 2, 2));
        prop_assert_eq!(modulate(&fi, &fo, &zero).unwrap(), fo.clone());
        prop_assert_eq!(modulate(&fi, &fo, &one).unwrap(), fi);
    }

    #[test]
    fn time_embedding_is_unit_bounded(t in 0usize..=1000, half in 1usize..32) {
        let e = time_embedding(t, 2 * half).unwrap();
        prop_assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn metrics_are_symmetric_and_bounded(a in image(), b in image()) {
        let s = ssim(&a, &b).unwrap();
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() <= 1e-9);
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }
}
