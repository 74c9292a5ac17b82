from trideficit.cli import main

main()
