fn main() {
    println!("pixnav");
}
