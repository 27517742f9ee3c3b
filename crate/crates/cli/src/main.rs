fn main() {
    println!("vascreg");
}
