use survem::mms::ls_slope;

fn main() {
    let hs = [2.659236863790527e-1, 1.259744225244108e-1, 7.026889228375385e-2, 3.854571414511868e-2];
    let l2 = [7.805639216374606e-5, 3.0301240496595586e-6, 2.0975036791866058e-7, 1.0819790307139314e-8];
    let h1 = [6.2516487693554165e-3, 5.369760682501531e-4, 6.480180993204265e-5, 5.964587810645095e-6];
    println!("old-run poly k=4: ls_l2 {:.4} ls_h1 {:.4}", ls_slope(&hs, &l2), ls_slope(&hs, &h1));
}
